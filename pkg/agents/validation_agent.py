"""
Validation Agent - compares generated artifacts against reference data with
JSD, MAPE and cosine similarity, and writes plot-data tables plus a report
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from agents.coordination_agent import participant_distribution, read_events, role_combinations
from models.events import Event
from models.schedule import ActivityCatalog, ActivityChain, DEFAULT_CATALOG, N_SLOTS, P_MAX
from utils.config import ValidationConfig
from utils.errors import UndefinedMetricError
from utils.io_store import activities_to_chains, read_activities, read_table, write_json, write_table
from utils.metrics import (
    Distribution,
    activity_count_distribution,
    cosine_similarity,
    duration_distribution,
    duration_quartiles,
    jsd,
    mape,
    slot_type_shares,
    start_time_distribution,
    type_distribution,
)

logger = logging.getLogger(__name__)

GENERATED = "generated"
REFERENCE = "reference"


# =========================
# ARTIFACTS
# =========================
@dataclass
class ArtifactSet:
    """Whatever one side of the comparison provides; missing pieces stay None"""

    chains: Optional[List[ActivityChain]] = None
    day_types: Optional[Dict[int, str]] = None  # person_id -> day_type
    events: Optional[List[Event]] = None
    vmt: Optional[pd.DataFrame] = None
    od: Optional[pd.DataFrame] = None
    corridor: Optional[pd.DataFrame] = None


def load_artifacts(directory: str, catalog: ActivityCatalog = DEFAULT_CATALOG) -> ArtifactSet:
    """Read activities.csv, events.csv, population.csv (or persons.csv), vmt.csv, od.csv, corridor.csv when present"""
    def path(name: str) -> Optional[str]:
        candidate = os.path.join(directory, name)
        return candidate if os.path.isfile(candidate) else None

    artifacts = ArtifactSet()
    if path("activities.csv"):
        by_household = activities_to_chains(read_activities(path("activities.csv")), catalog)
        artifacts.chains = [by_household[h][p] for h in sorted(by_household) for p in sorted(by_household[h])]
    people = path("population.csv") or path("persons.csv")
    if people:
        population = read_table(people, ["person_id"], ["day_type"])
        if "day_type" in population.columns:
            artifacts.day_types = dict(zip(population["person_id"].astype(int), population["day_type"].astype(str)))
    if path("events.csv"):
        artifacts.events = read_events(path("events.csv"), catalog)
    if path("vmt.csv"):
        artifacts.vmt = read_table(path("vmt.csv"), ["interval", "vmt_km"])
    if path("od.csv"):
        od = read_table(path("od.csv"), ["origin_taz"])
        od = od.set_index("origin_taz")
        od.columns = [int(c) for c in od.columns]
        artifacts.od = od
    if path("corridor.csv"):
        artifacts.corridor = read_table(path("corridor.csv"), ["link_id", "interval", "volume", "speed_ms"])
    return artifacts


# =========================
# REPORT
# =========================
@dataclass
class ReportEntry:
    metric: str
    slice: str
    value: Optional[float]
    reference_value: Optional[float] = None
    status: str = "ok"  # ok | absent | undefined
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "metric": self.metric,
            "slice": self.slice,
            "value": self.value,
            "reference_value": self.reference_value,
            "status": self.status,
            "details": self.details,
        }


@dataclass
class ValidationReport:
    entries: List[ReportEntry] = field(default_factory=list)
    plot_data: Dict[str, pd.DataFrame] = field(default_factory=dict)

    def get(self, metric: str, slice_name: str) -> ReportEntry:
        for entry in self.entries:
            if entry.metric == metric and entry.slice == slice_name:
                return entry
        raise KeyError((metric, slice_name))

    def slices(self) -> List[str]:
        return sorted({e.slice for e in self.entries})

    def to_dict(self) -> Dict[str, Any]:
        return {"entries": [e.to_dict() for e in self.entries]}


def _series_distribution(values: np.ndarray) -> Distribution:
    values = np.asarray(values, dtype=np.float64)
    return Distribution.from_counts({i: max(v, 0.0) for i, v in enumerate(values)})


def _long(gen: pd.DataFrame, ref: pd.DataFrame) -> pd.DataFrame:
    return pd.concat([gen.assign(source=GENERATED), ref.assign(source=REFERENCE)], ignore_index=True)


def _distribution_frame(dist: Distribution, key: str) -> pd.DataFrame:
    return pd.DataFrame({key: list(dist.labels), "share": dist.probabilities})


# =========================
# AGENT
# =========================
class ValidationAgent:
    """Worker agent for distributional validation of pipeline outputs"""

    def __init__(self, config: Optional[ValidationConfig] = None, catalog: ActivityCatalog = DEFAULT_CATALOG,
                 p_max: int = P_MAX, agent_id: str = "validation_agent"):
        self.agent_id = agent_id
        self.capabilities = ["jsd", "mape", "cosine_similarity", "build_distributions", "validate"]
        self.config = config or ValidationConfig()
        self.catalog = catalog
        self.p_max = p_max
        self._slices: Dict[str, Callable] = {
            "slot_type_shares": self._slot_type_shares,
            "type_shares": self._type_shares,
            "start_times": self._chain_jsd("start_times", start_time_distribution, "start_slot"),
            "durations": self._durations,
            "activity_counts": self._chain_jsd("activity_counts", activity_count_distribution, "n_activities"),
            "participants": self._participants,
            "role_combinations": self._role_combinations,
            "od_matrix": self._od_matrix,
            "vmt": self._vmt,
            "corridor_volume": self._corridor("volume"),
            "corridor_speed": self._corridor("speed_ms"),
        }
        logger.info(f"✅ Validation Agent initialized: {self.agent_id}")

    def validate(self, generated: ArtifactSet, reference: ArtifactSet) -> ValidationReport:
        """One or more entries per configured slice; missing inputs are reported as absent"""
        logger.info(f"📏 Validating {len(self.config.slices)} slices...")
        report = ValidationReport()
        for name in self.config.slices:
            handler = self._slices.get(name)
            if handler is None:
                report.entries.append(ReportEntry("unknown", name, None, status="absent",
                                                  details={"reason": "no such slice"}))
                continue
            try:
                handler(generated, reference, report)
            except UndefinedMetricError as exc:
                report.entries.append(ReportEntry("undefined", name, None, status="undefined",
                                                  details={"reason": exc.message}))
        for entry in report.entries:
            if entry.status != "ok":
                logger.warning(f"⚠️ {entry.slice}: {entry.status} ({entry.details.get('reason', '')})")
        return report

    def write_report(self, report: ValidationReport, out_dir: str) -> Dict[str, str]:
        """Plot data as <figure>.csv per slice (keyed by slice) plus report.json"""
        written = {}
        for name, frame in report.plot_data.items():
            stem = self.config.figures.get(name, name)
            written[name] = write_table(frame, os.path.join(out_dir, f"{stem}.csv"))
        written["report"] = write_json(report.to_dict(), os.path.join(out_dir, "report.json"))
        return written

    # =========================
    # SLICE HANDLERS
    # =========================
    @staticmethod
    def _absent(report: ValidationReport, metric: str, name: str, generated, reference) -> bool:
        missing = [side for side, value in ((GENERATED, generated), (REFERENCE, reference)) if not value]
        if missing:
            report.entries.append(ReportEntry(metric, name, None, status="absent",
                                              details={"reason": f"missing on {', '.join(missing)} side"}))
            return True
        return False

    def _slot_type_shares(self, gen: ArtifactSet, ref: ArtifactSet, report: ValidationReport):
        if self._absent(report, "jsd", "slot_type_shares", gen.chains, ref.chains):
            return
        gen_shares = slot_type_shares(gen.chains, self.catalog)
        ref_shares = slot_type_shares(ref.chains, self.catalog)
        series = []
        for slot in range(N_SLOTS):
            p = gen_shares.iloc[slot]
            q = ref_shares.iloc[slot]
            series.append(jsd(Distribution.from_counts(p[p > 0].to_dict()), Distribution.from_counts(q[q > 0].to_dict())))
        report.entries.append(ReportEntry("jsd", "slot_type_shares", float(np.mean(series)),
                                          details={"per_slot": series}))
        report.plot_data["slot_type_shares"] = _long(gen_shares.reset_index(), ref_shares.reset_index())

    def _type_shares(self, gen: ArtifactSet, ref: ArtifactSet, report: ValidationReport):
        if self._absent(report, "jsd", "type_shares", gen.chains, ref.chains):
            return
        p, q = type_distribution(gen.chains), type_distribution(ref.chains)
        report.entries.append(ReportEntry("jsd", "type_shares", jsd(p, q)))
        report.plot_data["type_shares"] = _long(_distribution_frame(p, "activity_type"),
                                                _distribution_frame(q, "activity_type"))

        # day-type slices when both sides carry the tag
        if not (gen.day_types and ref.day_types):
            return
        for day_type in sorted(set(gen.day_types.values()) & set(ref.day_types.values())):
            gen_part = [c for c in gen.chains if gen.day_types.get(c.person_id) == day_type]
            ref_part = [c for c in ref.chains if ref.day_types.get(c.person_id) == day_type]
            if gen_part and ref_part:
                value = jsd(type_distribution(gen_part), type_distribution(ref_part))
                report.entries.append(ReportEntry("jsd", f"type_shares[{day_type}]", value))

    def _chain_jsd(self, name: str, builder: Callable, key: str) -> Callable:
        def handler(gen: ArtifactSet, ref: ArtifactSet, report: ValidationReport):
            if self._absent(report, "jsd", name, gen.chains, ref.chains):
                return
            p, q = builder(gen.chains), builder(ref.chains)
            report.entries.append(ReportEntry("jsd", name, jsd(p, q)))
            report.plot_data[name] = _long(_distribution_frame(p, key), _distribution_frame(q, key))
        return handler

    def _durations(self, gen: ArtifactSet, ref: ArtifactSet, report: ValidationReport):
        if self._absent(report, "jsd", "durations", gen.chains, ref.chains):
            return
        value = jsd(duration_distribution(gen.chains), duration_distribution(ref.chains))
        gen_q, ref_q = duration_quartiles(gen.chains), duration_quartiles(ref.chains)
        report.entries.append(ReportEntry("jsd", "durations", value))
        report.plot_data["durations"] = _long(gen_q, ref_q)

    def _participants(self, gen: ArtifactSet, ref: ArtifactSet, report: ValidationReport):
        if self._absent(report, "jsd", "participants", gen.events, ref.events):
            return
        gen_dist = participant_distribution(gen.events, self.p_max)
        ref_dist = participant_distribution(ref.events, self.p_max)
        per_type = {label: jsd(gen_dist[label], ref_dist[label]) for label in sorted(set(gen_dist) & set(ref_dist))}
        if not per_type:
            raise UndefinedMetricError("No activity type has events on both sides")
        report.entries.append(ReportEntry("jsd", "participants", float(np.mean(list(per_type.values()))),
                                          details={"per_type": per_type}))
        for label in sorted(set(gen_dist) ^ set(ref_dist)):
            side = REFERENCE if label in gen_dist else GENERATED
            report.entries.append(ReportEntry("jsd", f"participants[{label}]", None, status="absent",
                                              details={"reason": f"missing on {side} side"}))
        frames = []
        for source, dists in ((GENERATED, gen_dist), (REFERENCE, ref_dist)):
            for label, dist in dists.items():
                frames.append(_distribution_frame(dist, "n_participants").assign(activity_type=label, source=source))
        report.plot_data["participants"] = pd.concat(frames, ignore_index=True)

    def _role_combinations(self, gen: ArtifactSet, ref: ArtifactSet, report: ValidationReport):
        if self._absent(report, "jsd", "role_combinations", gen.events, ref.events):
            return
        gen_roles, ref_roles = role_combinations(gen.events), role_combinations(ref.events)
        if gen_roles.empty or ref_roles.empty:
            raise UndefinedMetricError("No coordinated events on one side")

        def as_dist(frame: pd.DataFrame) -> Distribution:
            return Distribution.from_counts(
                {f"{r.activity_type}|{r.roles}": float(r.count) for r in frame.itertuples(index=False)}
            )

        report.entries.append(ReportEntry("jsd", "role_combinations", jsd(as_dist(gen_roles), as_dist(ref_roles))))
        report.plot_data["role_combinations"] = _long(gen_roles, ref_roles)

    def _od_matrix(self, gen: ArtifactSet, ref: ArtifactSet, report: ValidationReport):
        if self._absent(report, "cosine", "od_matrix", gen.od is not None, ref.od is not None):
            return
        zones = sorted(set(gen.od.index) | set(ref.od.index) | set(gen.od.columns) | set(ref.od.columns))
        a = gen.od.reindex(index=zones, columns=zones, fill_value=0).to_numpy(dtype=np.float64)
        b = ref.od.reindex(index=zones, columns=zones, fill_value=0).to_numpy(dtype=np.float64)
        report.entries.append(ReportEntry("cosine", "od_matrix", cosine_similarity(a, b)))
        origin, dest = np.meshgrid(zones, zones, indexing="ij")
        report.plot_data["od_matrix"] = pd.DataFrame(
            {"origin_taz": origin.ravel(), "dest_taz": dest.ravel(), GENERATED: a.ravel(), REFERENCE: b.ravel()}
        )

    def _paired_series(self, name: str, gen: np.ndarray, ref: np.ndarray, report: ValidationReport):
        result = mape(gen, ref, self.config.mape_epsilon)
        report.entries.append(ReportEntry("mape", name, result.value,
                                          details={"included": result.included, "excluded": result.excluded}))
        report.entries.append(ReportEntry("jsd", name, jsd(_series_distribution(gen), _series_distribution(ref))))

    def _vmt(self, gen: ArtifactSet, ref: ArtifactSet, report: ValidationReport):
        if self._absent(report, "mape", "vmt", gen.vmt is not None, ref.vmt is not None):
            return
        merged = gen.vmt[["interval", "vmt_km"]].merge(ref.vmt[["interval", "vmt_km"]], on="interval",
                                                        how="outer", suffixes=("_gen", "_ref")).fillna(0.0)
        merged = merged.sort_values("interval")
        self._paired_series("vmt", merged["vmt_km_gen"].to_numpy(), merged["vmt_km_ref"].to_numpy(), report)
        report.plot_data["vmt"] = merged.rename(columns={"vmt_km_gen": GENERATED, "vmt_km_ref": REFERENCE})

    def _corridor(self, column: str) -> Callable:
        name = "corridor_volume" if column == "volume" else "corridor_speed"

        def handler(gen: ArtifactSet, ref: ArtifactSet, report: ValidationReport):
            if self._absent(report, "mape", name, gen.corridor is not None, ref.corridor is not None):
                return
            how = "sum" if column == "volume" else "mean"
            g = gen.corridor.groupby("interval")[column].agg(how)
            r = ref.corridor.groupby("interval")[column].agg(how)
            merged = pd.concat({GENERATED: g, REFERENCE: r}, axis=1).fillna(0.0).sort_index()
            if merged.empty:
                raise UndefinedMetricError(f"Corridor extract for {name} is empty")
            self._paired_series(name, merged[GENERATED].to_numpy(), merged[REFERENCE].to_numpy(), report)
            report.plot_data[name] = merged.reset_index()
        return handler


def validate(generated: ArtifactSet, reference: ArtifactSet, config: Optional[ValidationConfig] = None,
             catalog: ActivityCatalog = DEFAULT_CATALOG) -> ValidationReport:
    return ValidationAgent(config, catalog).validate(generated, reference)
