"""
Road network service: link table, zone-to-node mapping and time-dependent
least-time routing over per-interval link travel times
"""

import heapq
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import networkx as nx
import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from utils.errors import ConfigError, InvariantViolationError, ReferentialError, UnroutableTripError
from utils.io_store import file_row, read_table

logger = logging.getLogger(__name__)

NETWORK_FIELDS = ["link_id", "from", "to", "length_m", "free_speed_ms", "capacity_vph", "lanes"]
NODE_FIELDS = ["node_id", "x", "y"]
VEHICLE_LENGTH_M = 7.5


@dataclass(frozen=True)
class Link:
    link_id: int
    from_node: int
    to_node: int
    length: float  # m
    free_speed: float  # m/s
    capacity: float  # veh/h
    lanes: int = 1
    vehicle_length: float = VEHICLE_LENGTH_M

    def __post_init__(self):
        if not (self.length > 0 and self.free_speed > 0 and self.capacity > 0 and self.lanes > 0):
            raise InvariantViolationError(f"Link {self.link_id} needs positive length, speed, capacity and lanes")

    @property
    def free_time(self) -> float:
        return self.length / self.free_speed

    @property
    def storage(self) -> int:
        """Maximum vehicles held on the link"""
        return max(1, int(math.floor(self.lanes * self.length / self.vehicle_length)))


class TravelTimes:
    """Per-link, per-interval travel time table in seconds"""

    def __init__(self, link_ids: Sequence[int], table: np.ndarray, interval_s: int):
        self.link_ids = list(link_ids)
        self.table = np.asarray(table, dtype=np.float64)
        self.interval_s = interval_s
        self._row = {lid: i for i, lid in enumerate(self.link_ids)}

    @classmethod
    def free_flow(cls, network: "RoadNetwork", interval_s: int = 900, n_intervals: int = 96) -> "TravelTimes":
        free = np.array([network.links[lid].free_time for lid in network.link_ids])
        return cls(network.link_ids, np.repeat(free[:, None], n_intervals, axis=1), interval_s)

    def at(self, link_id: int, time_s: float) -> float:
        column = min(max(int(time_s // self.interval_s), 0), self.table.shape[1] - 1)
        return float(self.table[self._row[link_id], column])


class RoadNetwork:
    """Directed multigraph of links keyed by link_id"""

    def __init__(self, links: Sequence[Link], node_xy: Optional[Dict[int, tuple]] = None):
        self.links: Dict[int, Link] = {}
        for link in sorted(links, key=lambda l: l.link_id):
            if link.link_id in self.links:
                raise InvariantViolationError(f"Duplicate link_id {link.link_id}")
            self.links[link.link_id] = link
        self.link_ids: List[int] = list(self.links)
        self.node_xy = dict(node_xy or {})

        self.graph = nx.MultiDiGraph()
        for link in self.links.values():
            self.graph.add_edge(link.from_node, link.to_node, key=link.link_id, link=link)
        self.graph.add_nodes_from(self.node_xy)

        # outgoing links in link_id order for deterministic relaxation
        self._out: Dict[int, List[Link]] = {node: [] for node in self.graph.nodes}
        for link in self.links.values():
            self._out[link.from_node].append(link)

    def __len__(self) -> int:
        return len(self.links)

    @property
    def nodes(self) -> List[int]:
        return sorted(self.graph.nodes)

    def out_links(self, node: int) -> List[Link]:
        return self._out.get(node, [])

    def index(self, link_id: int) -> int:
        return self.link_ids.index(link_id)

    def is_reachable(self, origin: int, dest: int) -> bool:
        return origin in self.graph and dest in self.graph and nx.has_path(self.graph, origin, dest)

    # =========================
    # ROUTING
    # =========================
    def route(self, origin: int, dest: int, departure_s: float, times: Optional[TravelTimes] = None) -> List[int]:
        """
        Time-dependent label-setting search from origin at departure_s.
        Equal arrival times resolve to the lower link_id.
        """
        if origin not in self.graph or dest not in self.graph:
            raise UnroutableTripError(f"Node {origin if origin not in self.graph else dest} is not in the network",
                                      origin=origin, dest=dest)
        if origin == dest:
            return []
        times = times or TravelTimes.free_flow(self)

        arrival = {origin: float(departure_s)}
        via: Dict[int, Link] = {}
        settled = set()
        heap = [(float(departure_s), origin)]
        while heap:
            t, node = heapq.heappop(heap)
            if node in settled:
                continue
            settled.add(node)
            if node == dest:
                break
            for link in self.out_links(node):
                nxt = link.to_node
                if nxt in settled:
                    continue
                candidate = t + times.at(link.link_id, t)
                best = arrival.get(nxt)
                if best is None or candidate < best or (candidate == best and link.link_id < via[nxt].link_id):
                    arrival[nxt] = candidate
                    via[nxt] = link
                    heapq.heappush(heap, (candidate, nxt))

        if dest not in settled:
            raise UnroutableTripError(f"No path from node {origin} to node {dest}", origin=origin, dest=dest)
        path = []
        node = dest
        while node != origin:
            link = via[node]
            path.append(link.link_id)
            node = link.from_node
        return path[::-1]

    def path_time(self, path: Sequence[int], departure_s: float, times: Optional[TravelTimes] = None) -> float:
        """Travel time along a fixed link sequence starting at departure_s"""
        times = times or TravelTimes.free_flow(self)
        t = float(departure_s)
        for link_id in path:
            t += times.at(link_id, t)
        return t - float(departure_s)

    # =========================
    # ZONES
    # =========================
    def map_zones(self, zones) -> Dict[int, int]:
        """taz_id -> node: explicit zone node when given, otherwise nearest node"""
        mapping: Dict[int, int] = {}
        tree, node_ids = None, None
        for zone in zones.zones:
            if zone.node is not None:
                if zone.node not in self.graph:
                    raise ReferentialError(f"Zone {zone.taz_id} references unknown node {zone.node}",
                                           taz_id=zone.taz_id, node=zone.node)
                mapping[zone.taz_id] = zone.node
                continue
            if tree is None:
                if not self.node_xy:
                    raise ConfigError("Zones without a node column need paths.nodes for nearest-node mapping",
                                      key="paths.nodes")
                node_ids = sorted(self.node_xy)
                tree = cKDTree(np.array([self.node_xy[n] for n in node_ids], dtype=np.float64))
            _, i = tree.query([zone.x, zone.y])
            mapping[zone.taz_id] = node_ids[int(i)]
        return mapping


# =========================
# FILE INPUTS
# =========================
def read_network(path: str, nodes_path: Optional[str] = None, vehicle_length: float = VEHICLE_LENGTH_M) -> RoadNetwork:
    df = read_table(path, NETWORK_FIELDS)
    links = []
    for idx, row in df.iterrows():
        try:
            links.append(
                Link(
                    link_id=int(row["link_id"]),
                    from_node=int(row["from"]),
                    to_node=int(row["to"]),
                    length=float(row["length_m"]),
                    free_speed=float(row["free_speed_ms"]),
                    capacity=float(row["capacity_vph"]),
                    lanes=int(row["lanes"]),
                    vehicle_length=vehicle_length,
                )
            )
        except InvariantViolationError as exc:
            raise InvariantViolationError(exc.message, rows=[file_row(idx)])

    node_xy = None
    if nodes_path:
        nodes = read_table(nodes_path, NODE_FIELDS)
        node_xy = {int(r.node_id): (float(r.x), float(r.y)) for r in nodes.itertuples(index=False)}
    network = RoadNetwork(links, node_xy)
    logger.info(f"🛣️ Loaded network: {len(network)} links, {network.graph.number_of_nodes()} nodes")
    return network


def network_to_frame(network: RoadNetwork) -> pd.DataFrame:
    rows = [
        {
            "link_id": l.link_id,
            "from": l.from_node,
            "to": l.to_node,
            "length_m": l.length,
            "free_speed_ms": l.free_speed,
            "capacity_vph": l.capacity,
            "lanes": l.lanes,
        }
        for l in network.links.values()
    ]
    return pd.DataFrame.from_records(rows, columns=NETWORK_FIELDS)
