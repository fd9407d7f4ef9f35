from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from closurerec.domain import DataError, PerformanceMatrix
from closurerec.stability import apply_stability_zeroing, detect_staggering, longest_change_run

from .oracles import count_direction_changes


def test_monotone_profile_not_flagged():
    assert not detect_staggering(np.linspace(0, 1, 20))


def test_full_range_alternation_flagged():
    p = [0, 1, 0, 1, 0, 1, 0, 1]
    assert longest_change_run(p) == 6
    assert detect_staggering(p)


def test_four_changes_then_flat_not_flagged():
    p = [0, 1, 0, 1, 0, 1, 1, 1, 1]
    assert longest_change_run(p) == 4
    assert not detect_staggering(p)


def test_five_changes_flagged():
    p = [0, 1, 0, 1, 0, 1, 0]
    assert longest_change_run(p) == 5
    assert detect_staggering(p)


def test_small_wiggles_below_amplitude_ignored():
    base = np.linspace(0, 1, 12)
    wiggle = base + np.array([0, 0.005] * 6)
    assert not detect_staggering(np.sort(base)[::-1] * 0 + wiggle, amplitude_fraction=0.5)


def test_zero_difference_breaks_run():
    p = [0, 1, 0, 1, 1, 0, 1, 0, 1]
    assert longest_change_run(p) == 3


def test_constant_profile_never_flagged():
    assert not detect_staggering([0.3] * 10)
    assert longest_change_run([0.3] * 10) == 0


def test_profile_errors():
    with pytest.raises(ValueError):
        detect_staggering([1.0])
    with pytest.raises(ValueError):
        detect_staggering([1.0, np.nan, 2.0])


def test_config_exposed_thresholds():
    p = [0, 1, 0, 1, 0, 1]
    assert not detect_staggering(p)
    assert detect_staggering(p, min_changes=4)


profiles = st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=30)


@settings(max_examples=300, deadline=None)
@given(profiles, st.floats(0.0, 0.2))
def test_run_matches_definition(p, amp):
    assert longest_change_run(p, amp) == count_direction_changes(p, amp)


@settings(max_examples=300, deadline=None)
@given(
    st.lists(st.integers(-50, 50), min_size=2, max_size=30),
    st.sampled_from([0.5, 2.0, 4.0, 0.25]),
    st.integers(-100, 100),
)
def test_scale_offset_reversal_invariance(p, a, b):
    # dyadic scales and integer offsets keep every difference exact
    p = np.asarray(p, dtype=float)
    flag = detect_staggering(p)
    assert detect_staggering(a * p + b) == flag
    assert detect_staggering(p[::-1]) == flag


def _pm(vals, mask=None):
    vals = np.asarray(vals, dtype=float)
    return PerformanceMatrix(vals, [f"i{r}" for r in range(vals.shape[0])], [f"c{c}" for c in range(vals.shape[1])], mask)


def test_zeroing_no_flags_identity():
    m = _pm([[0.73, np.nan]])
    assert apply_stability_zeroing(m, {}) == m


def test_zeroing_flagged_entry():
    m = _pm([[0.73, 0.4]])
    out = apply_stability_zeroing(m, {("i0", "c0"): True, ("i0", "c1"): False})
    assert out.values.tolist() == [[0.0, 0.4]]


def test_zeroing_idempotent_and_only_decreases():
    m = _pm([[0.0, 0.5], [0.2, np.nan]])
    flags = {("i0", "c0"): True, ("i1", "c0"): True}
    once = apply_stability_zeroing(m, flags)
    assert apply_stability_zeroing(once, flags) == once
    obs = m.observed
    assert (once.values[obs] <= m.values[obs]).all()
    assert np.array_equal(once.observed, obs)


def test_zeroing_missing_entry_errors():
    m = _pm([[0.5, np.nan]])
    with pytest.raises(DataError):
        apply_stability_zeroing(m, {("i0", "c1"): True})
