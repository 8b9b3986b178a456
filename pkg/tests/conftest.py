"""Shared fixtures: small households, chains and the toy world files"""

from pathlib import Path

import pytest
import yaml

from models.schedule import DEFAULT_CATALOG, Household, Person, chain_from_records
from utils.synthetic_corpus import build_toy_network, build_toy_zones


def make_person(person_id, age=40, employed=True, student=False, has_license=True, gender="female", relationship=None):
    return Person(person_id, age, employed, student, 3 if age >= 18 else 0, has_license, gender, relationship)


def make_household(household_id, members, income=5, vehicles=1, home_taz=1, day_type="weekday"):
    return Household(household_id, tuple(members), income, vehicles, home_taz, day_type)


def chain(person_id, *records):
    return chain_from_records(person_id, records, DEFAULT_CATALOG)


def home_day(person_id):
    return chain(person_id, ("Home", 0, 1440))


def work_day(person_id, start=480, end=1020):
    return chain(person_id, ("Home", 0, start), ("Work", start, end), ("Home", end, 1440))


@pytest.fixture
def catalog():
    return DEFAULT_CATALOG


@pytest.fixture
def couple():
    return make_household(
        1,
        [
            make_person(1, age=45, gender="male", relationship="Self"),
            make_person(2, age=43, employed=False, relationship="Spouse"),
        ],
    )


@pytest.fixture
def toy_world(tmp_path):
    zones = build_toy_zones(str(tmp_path / "zones.csv"))
    network = build_toy_network(str(tmp_path / "network.csv"), str(tmp_path / "nodes.csv"))
    return {"zones": zones, "network": network, "nodes": str(tmp_path / "nodes.csv")}


REPO = Path(__file__).resolve().parent.parent


def tiny_config_dict(out_dir):
    """Toy-world run small enough for a unit test"""
    data = REPO / "data"
    return {
        "paths": {
            "output_dir": str(out_dir),
            "zones": str(data / "zones.csv"),
            "network": str(data / "network.csv"),
            "nodes": str(data / "nodes.csv"),
            "marginals": str(data / "marginals.csv"),
            "seed_sample": str(data / "seed_sample.csv"),
            "synthetic_rules": str(REPO / "config" / "synthetic_rules.yaml"),
        },
        "seeds": {name: i for i, name in enumerate(
            ["population", "corpus", "seed_chain", "training", "generation", "location", "modes", "simulation"], start=1)},
        "population": {"n_households": 12},
        "corpus": {"n_households": 40},
        "model": {"embed_dim": 16, "n_heads": 2, "n_encoder_layers": 1, "n_decoder_layers": 1, "ffn_dim": 32,
                  "dropout": 0.0},
        "training": {"epochs": 1, "batch_size": 8, "min_households": 10},
        "location": {"refine_max_iter": 3},
        "simulation": {"iterations": 1, "corridor_links": [5]},
        "logging": {"level": "WARNING"},
    }


@pytest.fixture
def tiny_config_path(tmp_path):
    path = tmp_path / "pipeline.yaml"
    path.write_text(yaml.safe_dump(tiny_config_dict(tmp_path / "run")))
    return str(path)
