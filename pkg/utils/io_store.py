"""
CSV / JSON artifact store. Every table is read against a documented header
schema and written with a fixed float format so reruns are byte-identical.
"""

import json
import logging
import os
from collections import defaultdict
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from models.schedule import (
    ActivityCatalog,
    ActivityChain,
    DEFAULT_CATALOG,
    Household,
    Person,
    P_MAX,
    chain_from_records,
    truncate_household,
)
from utils.errors import ConfigError, InvariantViolationError, ReferentialError, SchemaError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"

POPULATION_FIELDS = [
    "household_id",
    "person_id",
    "age",
    "employed",
    "student",
    "education",
    "has_license",
    "gender",
    "income",
    "vehicles",
    "home_taz",
]
POPULATION_OPTIONAL = ["relationship", "day_type", "size", "weight"]

ACTIVITY_FIELDS = ["household_id", "person_id", "activity_type", "start_min", "end_min"]
MARGINAL_FIELDS = ["zone", "dimension", "category", "count"]

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}


# =========================
# GENERIC TABLES
# =========================
def read_table(path: str, required: Sequence[str], optional: Sequence[str] = ()) -> pd.DataFrame:
    """Load a CSV and check its header against the schema"""
    if not os.path.isfile(path):
        raise ConfigError(f"Input file not found: {path}", path=path)
    try:
        df = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise SchemaError(f"Cannot parse {path}: {exc}", path=path)

    missing = [c for c in required if c not in df.columns]
    if missing:
        raise SchemaError(f"{os.path.basename(path)} is missing columns {missing}", path=path, missing=missing)
    unknown = [c for c in df.columns if c not in required and c not in optional]
    if unknown:
        logger.debug(f"Ignoring extra columns in {path}: {unknown}")
    return df


def write_table(df: pd.DataFrame, path: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_json(payload: Dict[str, Any], path: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(_to_builtin(payload), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_json(path: str) -> Dict[str, Any]:
    if not os.path.isfile(path):
        raise ConfigError(f"Input file not found: {path}", path=path)
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _to_builtin(value: Any) -> Any:
    """Convert numpy scalars/arrays nested in dicts and lists into JSON types"""
    if isinstance(value, dict):
        return {str(k): _to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_builtin(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def file_row(index: int) -> int:
    """Line number of a data row in its CSV (header is line 1)"""
    return int(index) + 2


def parse_bool_column(df: pd.DataFrame, column: str) -> pd.Series:
    text = df[column].astype(str).str.strip().str.lower()
    bad = ~text.isin(_TRUE | _FALSE)
    if bad.any():
        rows = [file_row(i) for i in df.index[bad]]
        raise InvariantViolationError(f"Column '{column}' has non-boolean values", rows=rows)
    return text.isin(_TRUE)


# =========================
# POPULATION
# =========================
def population_frame_to_households(
    df: pd.DataFrame,
    zone_ids: Optional[Iterable[int]] = None,
    p_max: int = P_MAX,
    gender_priority: Optional[Sequence[str]] = None,
) -> List[Household]:
    """Validate a person-level population frame and group it into households"""
    if df[POPULATION_FIELDS].isna().any().any():
        rows = [file_row(i) for i in df.index[df[POPULATION_FIELDS].isna().any(axis=1)]]
        raise InvariantViolationError("Population has missing values", rows=rows)

    numeric = ["household_id", "person_id", "age", "education", "income", "vehicles", "home_taz"]
    for column in numeric:
        coerced = pd.to_numeric(df[column], errors="coerce")
        if coerced.isna().any():
            rows = [file_row(i) for i in df.index[coerced.isna()]]
            raise InvariantViolationError(f"Column '{column}' must be numeric", rows=rows)
        df[column] = coerced.astype(np.int64)

    for column, label in (("age", "age"), ("vehicles", "vehicle count"), ("education", "education")):
        negative = df[column] < 0
        if negative.any():
            rows = [file_row(i) for i in df.index[negative]]
            raise InvariantViolationError(f"Negative {label} at rows {rows}", rows=rows)

    employed = parse_bool_column(df, "employed")
    student = parse_bool_column(df, "student")
    licensed = parse_bool_column(df, "has_license")

    if zone_ids is not None:
        known = set(int(z) for z in zone_ids)
        unknown = ~df["home_taz"].isin(known)
        if unknown.any():
            rows = [file_row(i) for i in df.index[unknown]]
            bad = sorted(set(df.loc[unknown, "home_taz"].tolist()))
            raise ReferentialError(f"Households reference unknown TAZ {bad}", rows=rows, taz=bad)

    duplicated = df["person_id"].duplicated(keep=False)
    if duplicated.any():
        rows = [file_row(i) for i in df.index[duplicated]]
        raise InvariantViolationError("Duplicate person_id values", rows=rows)

    has_relationship = "relationship" in df.columns
    has_day_type = "day_type" in df.columns
    households: List[Household] = []
    for household_id, group in df.groupby("household_id", sort=True):
        # Step 1: household attributes must agree across member rows
        for column in ("income", "vehicles", "home_taz"):
            if group[column].nunique() != 1:
                rows = [file_row(i) for i in group.index]
                raise InvariantViolationError(
                    f"Household {household_id} has inconsistent '{column}'", rows=rows
                )
        if "size" in group.columns and int(group["size"].iloc[0]) != len(group):
            rows = [file_row(i) for i in group.index]
            raise InvariantViolationError(
                f"Household {household_id} declares size {int(group['size'].iloc[0])} but has {len(group)} members",
                rows=rows,
            )

        # Step 2: build members
        members = []
        for idx, row in group.iterrows():
            relationship = row["relationship"] if has_relationship else None
            if isinstance(relationship, float) and np.isnan(relationship):
                relationship = None
            members.append(
                Person(
                    person_id=int(row["person_id"]),
                    age=int(row["age"]),
                    employed=bool(employed[idx]),
                    student=bool(student[idx]),
                    education=int(row["education"]),
                    has_license=bool(licensed[idx]),
                    gender=str(row["gender"]),
                    relationship=relationship,
                )
            )
        first = group.iloc[0]
        household = Household(
            household_id=int(household_id),
            members=tuple(members),
            income=int(first["income"]),
            vehicles=int(first["vehicles"]),
            home_taz=int(first["home_taz"]),
            day_type=str(first["day_type"]) if has_day_type else "weekday",
        )

        # Step 3: households above P_max keep their highest-priority members
        if household.size > p_max:
            logger.warning(f"Household {household_id} has {household.size} members, truncating to {p_max}")
            household = truncate_household(household, p_max, gender_priority)
        households.append(household)
    return households


def read_population(
    path: str,
    zone_ids: Optional[Iterable[int]] = None,
    p_max: int = P_MAX,
    gender_priority: Optional[Sequence[str]] = None,
) -> List[Household]:
    df = read_table(path, POPULATION_FIELDS, POPULATION_OPTIONAL)
    households = population_frame_to_households(df, zone_ids, p_max, gender_priority)
    logger.info(f"Loaded {len(households)} households from {path}")
    return households


def households_to_frame(households: Sequence[Household]) -> pd.DataFrame:
    records = []
    for household in households:
        for person in household.members:
            records.append(
                {
                    "household_id": household.household_id,
                    "person_id": person.person_id,
                    "age": person.age,
                    "employed": int(person.employed),
                    "student": int(person.student),
                    "education": person.education,
                    "has_license": int(person.has_license),
                    "gender": person.gender,
                    "relationship": person.relationship or "",
                    "income": household.income,
                    "vehicles": household.vehicles,
                    "home_taz": household.home_taz,
                    "size": household.size,
                    "day_type": household.day_type,
                }
            )
    columns = POPULATION_FIELDS + ["relationship", "size", "day_type"]
    return pd.DataFrame.from_records(records, columns=columns)


def write_population(households: Sequence[Household], path: str) -> str:
    return write_table(households_to_frame(households), path)


# =========================
# ACTIVITY CORPUS
# =========================
def read_activities(path: str) -> pd.DataFrame:
    df = read_table(path, ACTIVITY_FIELDS)
    for column in ("household_id", "person_id", "start_min", "end_min"):
        coerced = pd.to_numeric(df[column], errors="coerce")
        if coerced.isna().any():
            rows = [file_row(i) for i in df.index[coerced.isna()]]
            raise InvariantViolationError(f"Column '{column}' must be numeric", rows=rows)
        df[column] = coerced.astype(np.int64)
    return df


def activities_to_chains(
    df: pd.DataFrame, catalog: ActivityCatalog = DEFAULT_CATALOG
) -> Dict[int, Dict[int, ActivityChain]]:
    """Group activity rows into {household_id: {person_id: chain}}"""
    unknown = ~df["activity_type"].isin(catalog.labels)
    if unknown.any():
        rows = [file_row(i) for i in df.index[unknown]]
        raise InvariantViolationError(
            f"Unknown activity types {sorted(set(df.loc[unknown, 'activity_type']))}", rows=rows
        )

    chains: Dict[int, Dict[int, ActivityChain]] = defaultdict(dict)
    ordered = df.sort_values(["household_id", "person_id", "start_min"], kind="mergesort")
    for (household_id, person_id), group in ordered.groupby(["household_id", "person_id"], sort=True):
        records = zip(group["activity_type"], group["start_min"], group["end_min"])
        chains[int(household_id)][int(person_id)] = chain_from_records(int(person_id), records, catalog)
    return dict(chains)


def chains_to_frame(chains_by_household: Dict[int, Dict[int, ActivityChain]]) -> pd.DataFrame:
    records = []
    for household_id in sorted(chains_by_household):
        for person_id in sorted(chains_by_household[household_id]):
            for activity in chains_by_household[household_id][person_id].activities:
                records.append(
                    {
                        "household_id": household_id,
                        "person_id": person_id,
                        "activity_type": activity.type.label,
                        "start_min": activity.start,
                        "end_min": activity.end,
                    }
                )
    return pd.DataFrame.from_records(records, columns=ACTIVITY_FIELDS)


def write_activities(chains_by_household: Dict[int, Dict[int, ActivityChain]], path: str) -> str:
    return write_table(chains_to_frame(chains_by_household), path)


# =========================
# MARGINALS
# =========================
def read_marginals(path: str) -> pd.DataFrame:
    df = read_table(path, MARGINAL_FIELDS)
    counts = pd.to_numeric(df["count"], errors="coerce")
    bad = counts.isna() | (counts < 0)
    if bad.any():
        rows = [file_row(i) for i in df.index[bad]]
        raise InvariantViolationError("Marginal counts must be non-negative numbers", rows=rows)
    df["count"] = counts.astype(float)
    df["zone"] = pd.to_numeric(df["zone"]).astype(np.int64)
    df["category"] = df["category"].astype(str)
    return df
