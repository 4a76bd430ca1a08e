import itertools

import numpy as np
import pytest

from app.core.errors import DomainError
from app.simulation.selection import (
    avg_threshold,
    select_all,
    select_argmin,
    select_workers,
    tradeoff_score,
    tradeoff_scores,
)


def _brute_force(theta, threshold):
    """Largest feasible indicator by enumeration; None when only the empty set is feasible."""
    best, best_size = None, 0
    for bits in itertools.product([0, 1], repeat=len(theta)):
        if any(b and t > threshold for b, t in zip(bits, theta)):
            continue
        if sum(bits) > best_size:
            best, best_size = bits, sum(bits)
    return best


def test_tradeoff_endpoints_and_value():
    assert tradeoff_score(0.5, 0.2, 1.0) == 0.5
    assert tradeoff_score(0.5, 0.2, 0.0) == 0.2
    assert tradeoff_score(0.5, 0.2, 0.9) == pytest.approx(0.47)


@pytest.mark.parametrize("tau", [-0.1, 1.5])
def test_tradeoff_rejects_tau(tau):
    with pytest.raises(DomainError):
        tradeoff_score(0.5, 0.2, tau)
    with pytest.raises(DomainError):
        tradeoff_scores([0.5], [0.2], tau)


def test_tradeoff_rejects_negative_loss():
    with pytest.raises(DomainError):
        tradeoff_score(-0.1, 0.2, 0.5)


def test_select_inclusive_threshold():
    sel = select_workers([0.2, 0.5, 0.8], 0.5, t=2)
    assert sel.indicator.tolist() == [True, True, False]
    assert not sel.fallback and sel.num_selected == 2


def test_select_fallback_to_argmin():
    sel = select_workers([0.9, 0.7, 0.8], 0.5, t=3)
    assert sel.selected == [1]
    assert sel.fallback


def test_first_round_selects_everyone():
    sel = select_workers([0.9, 0.1, 0.4], 0.05, t=1)
    assert sel.indicator.all() and sel.bootstrap
    assert select_workers([0.9, 0.1], None, t=5).indicator.all()


def test_select_empty_theta():
    with pytest.raises(DomainError):
        select_workers([], 0.5, t=2)


def test_avg_threshold():
    assert avg_threshold([0.2, 0.5, 0.8]) == pytest.approx(0.5)
    assert avg_threshold([0.3]) == 0.3
    with pytest.raises(DomainError):
        avg_threshold([])


def test_constant_scores_select_everyone():
    for c in (0.1, 0.3, 1 / 3, 0.7):
        theta = [c] * 7
        threshold = avg_threshold(theta)
        assert threshold == c
        assert select_workers(theta, threshold, t=2).indicator.all()


def test_selection_matches_brute_force_enumerator():
    rng = np.random.default_rng(2024)
    for _ in range(500):
        C = int(rng.integers(1, 9))
        theta = rng.uniform(0, 1, C).round(2)
        threshold = float(rng.uniform(-0.1, 1.0))
        sel = select_workers(theta, threshold, t=4)
        expected = _brute_force(theta, threshold)
        if expected is None:
            assert sel.fallback and sel.num_selected == 1
            assert sel.selected == [int(np.argmin(theta))]
        else:
            assert not sel.fallback
            assert sel.indicator.astype(int).tolist() == list(expected)
        assert sel.num_selected >= 1


def test_selection_shift_invariance(rng):
    for _ in range(100):
        prev = rng.integers(0, 16, 6) / 8.0
        curr = rng.integers(0, 16, 6) / 8.0
        shift = float(rng.integers(-4, 5)) / 4.0
        base = select_workers(curr, avg_threshold(prev), t=3)
        moved = select_workers(curr + shift, avg_threshold(prev + shift), t=3)
        np.testing.assert_array_equal(base.indicator, moved.indicator)


def test_select_all_and_argmin():
    assert select_all([0.3, 0.1, 0.2], t=4).num_selected == 3
    assert select_argmin([0.3, 0.1, 0.1], t=4).selected == [1]


def test_selection_rows():
    rows = select_workers([0.2, 0.6], 0.5, t=2).rows()
    assert rows[0] == {"round": 2, "worker": 0, "theta": 0.2, "threshold": 0.5, "selected": 1, "fallback": 0}
    assert rows[1]["selected"] == 0
