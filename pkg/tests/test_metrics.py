import numpy as np
import pytest

from tests.conftest import chain, home_day, work_day
from utils.errors import NormalizationError, UndefinedMetricError
from utils.metrics import (
    Distribution,
    activity_count_distribution,
    build_distributions,
    cosine_similarity,
    duration_quartiles,
    jsd,
    mape,
    slot_type_shares,
    type_distribution,
)


def test_jsd_hand_value_and_symmetry():
    p = Distribution(("a", "b"), [0.5, 0.5])
    q = Distribution(("a", "b"), [1.0, 0.0])
    assert jsd(p, q) == pytest.approx(0.3113, abs=1e-4)
    assert jsd(p, q) == jsd(q, p)
    assert jsd(p, p) == pytest.approx(0.0, abs=1e-12)


def test_jsd_disjoint_support_is_one():
    p = Distribution.from_counts({"Home": 3})
    q = Distribution.from_counts({"Work": 5})
    assert jsd(p, q) == pytest.approx(1.0, abs=1e-9)


def test_distribution_rejects_unnormalised_mass():
    with pytest.raises(NormalizationError):
        Distribution(("a", "b"), [0.5, 0.6])
    with pytest.raises(UndefinedMetricError):
        Distribution.from_counts({"a": 0})


def test_mape_hand_value_and_exclusions():
    assert mape([90, 110], [100, 100]).value == pytest.approx(10.0)
    assert mape([5, 5], [5, 5]).value == 0.0
    result = mape([1, 90], [0, 100])
    assert result.excluded == 1 and result.included == 1
    assert result.value == pytest.approx(10.0)
    with pytest.raises(UndefinedMetricError):
        mape([1, 2], [0, 0])


def test_cosine_scale_invariance_and_zero_matrix():
    a = np.array([[0, 3], [4, 1]])
    assert cosine_similarity(a, 2.5 * a) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(UndefinedMetricError):
        cosine_similarity(a, np.zeros((2, 2)))
    with pytest.raises(UndefinedMetricError):
        cosine_similarity(a, np.ones((3, 3)))


def test_all_home_corpus():
    chains = [home_day(1), home_day(2)]
    assert type_distribution(chains).get("Home") == 1.0
    assert activity_count_distribution(chains).get(1) == 1.0
    shares = slot_type_shares(chains)
    assert (shares["Home"] == 1.0).all()


def test_slot_shares_and_quartiles_for_mixed_days():
    chains = [work_day(1, 480, 1020), home_day(2)]
    shares = slot_type_shares(chains)
    assert shares.loc[40, "Work"] == 0.5
    assert np.allclose(shares.sum(axis=1), 1.0)
    quartiles = duration_quartiles(chains).set_index("activity_type")
    assert quartiles.loc["Work", "median"] == 540


def test_identical_corpora_give_zero_divergence():
    chains = [work_day(1), chain(2, ("Home", 0, 600), ("BuyGoods", 600, 660), ("Home", 660, 1440))]
    a = build_distributions(chains)
    b = build_distributions(list(reversed(chains)))
    assert jsd(a.type_shares, b.type_shares) == pytest.approx(0.0, abs=1e-12)
    assert jsd(a.start_times, b.start_times) == pytest.approx(0.0, abs=1e-12)
    assert jsd(a.slot_distribution(40), b.slot_distribution(40)) == pytest.approx(0.0, abs=1e-12)
