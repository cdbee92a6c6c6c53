from fractions import Fraction

import numpy as np
import pytest

from stochrelu.circuit import Mode
from stochrelu.faultmodel import (
    CSV_HEADER,
    GuardError,
    conditioned_set_size,
    conditioned_trunc_count,
    default_x_grid,
    exhaustive_fault_count,
    exhaustive_trunc_count,
    fault_profile,
    monte_carlo_fault_rate,
    p_sign_fault,
    p_total_fault,
    p_trunc_fault,
    predicted_fault_count,
    stoch_sign,
    validation_rows,
    wilson_interval,
)
from stochrelu.field import DEFAULT_PARAMS, FieldParams

P257 = FieldParams(257)
P509 = FieldParams(509)

# counts from a pure-Python loop over every mask, frozen
FROZEN_COUNTS = {
    (3, 4, Mode.POS_ZERO): 416,
    (-3, 4, Mode.NEG_PASS): 416,
    (3, 0, Mode.POS_ZERO): 3,
    (10, 0, Mode.POS_ZERO): 10,
    (-10, 6, Mode.NEG_PASS): 439,
    (40, 6, Mode.POS_ZERO): 229,
}


def brute_counts(p, k, mode):
    """Independent enumeration: rows are x in [0, p), entries count faulting masks."""
    half = (p - 1) // 2
    x = np.arange(p)[:, None]
    t = np.arange(p)[None, :]
    s = (x + t) % p
    neg = (s >> k) <= (t >> k) if mode == Mode.POS_ZERO else (s >> k) < (t >> k)
    wrong = neg == (x < half)
    wrong[0] = False
    return wrong.sum(axis=1)


def test_stoch_sign_scalar_and_array():
    assert stoch_sign(10, 3, 0, Mode.POS_ZERO) == 1
    assert stoch_sign(3, 3, 0, Mode.POS_ZERO) == 0
    assert stoch_sign(3, 3, 0, Mode.NEG_PASS) == 1
    np.testing.assert_array_equal(stoch_sign(np.array([10, 3]), np.array([3, 3]), 0, Mode.POS_ZERO), [1, 0])


def test_sign_fault_examples():
    assert p_sign_fault(0) == 0
    assert p_sign_fault(10, P257, exact=True) == Fraction(10, 257)


def test_trunc_fault_examples():
    assert p_trunc_fault(2**4, 4, Mode.POS_ZERO, P509) == 0
    assert p_trunc_fault(2**17, 18, Mode.POS_ZERO) == 0.5
    assert p_trunc_fault(-(2**17), 18, Mode.POS_ZERO) == 0
    assert p_trunc_fault(-(2**17), 18, Mode.NEG_PASS) == 0.5
    assert p_trunc_fault(5, 0, Mode.POS_ZERO) == 0


def test_out_of_range_is_sign_fault_only():
    for k in (4, 12, 18):
        x = 10 * 2**k
        assert p_total_fault(x, k, Mode.POS_ZERO) == pytest.approx(x / DEFAULT_PARAMS.p)
        assert p_total_fault(-x, k, Mode.NEG_PASS) == pytest.approx(x / DEFAULT_PARAMS.p)


def test_zero_never_faults():
    assert p_total_fault(0, 5, Mode.POS_ZERO, P509) == 0
    assert exhaustive_fault_count(0, 0, Mode.POS_ZERO, P509) == 0
    assert predicted_fault_count(0, 6, Mode.NEG_PASS, P509) == 0


@pytest.mark.parametrize("key", sorted(FROZEN_COUNTS, key=str))
def test_frozen_counts(key):
    x, k, mode = key
    assert exhaustive_fault_count(x, k, mode, P509) == FROZEN_COUNTS[key]
    assert predicted_fault_count(x, k, mode, P509) == FROZEN_COUNTS[key]


def test_untruncated_count_is_magnitude():
    counts = brute_counts(509, 0, Mode.POS_ZERO)
    signed = np.where(np.arange(509) < P509.half, np.arange(509), np.arange(509) - 509)
    np.testing.assert_array_equal(counts, np.abs(signed))


@pytest.mark.parametrize("mode", list(Mode))
@pytest.mark.parametrize("k", [0, 2, 4, 6, 7])
def test_predicted_counts_match_enumeration(k, mode):
    counts = brute_counts(509, k, mode)
    for x in range(509):
        assert predicted_fault_count(x, k, mode, P509) == counts[x]
        assert exhaustive_fault_count(x, k, mode, P509) == counts[x]


@pytest.mark.parametrize("mode", list(Mode))
def test_truncation_faults_only_inside_mode_range(mode):
    for k in (2, 4, 6):
        for x in range(-254, 254):
            extra = exhaustive_trunc_count(x, k, mode, P509)
            inside = 0 < x < 2**k if mode == Mode.POS_ZERO else -(2**k) < x < 0
            if not inside:
                assert extra == 0
            else:
                assert extra == conditioned_trunc_count(x, k, mode, P509) > 0


def test_conditioned_count_near_ratio():
    # exact counts sit within one partial block of the conditional ratio
    for k in (2, 4, 6):
        for a in range(1, 2**k):
            for x, mode in ((a, Mode.POS_ZERO), (-a, Mode.NEG_PASS)):
                ratio = p_trunc_fault(x, k, mode, P509, exact=True) * conditioned_set_size(x, P509)
                assert abs(conditioned_trunc_count(x, k, mode, P509) - ratio) <= 2**k


def test_mirror_symmetry():
    for k in (0, 3, 6):
        for x in range(1, 254):
            assert predicted_fault_count(x, k, Mode.POS_ZERO, P509) == predicted_fault_count(-x, k, Mode.NEG_PASS, P509)


def test_total_probability_tracks_enumeration():
    for mode in Mode:
        for k in (0, 2, 4, 6):
            counts = brute_counts(509, k, mode)
            for x in range(509):
                assert abs(p_total_fault(x, k, mode, P509) - counts[x] / 509) <= 2**k / 4 / 509 + 1e-12


def test_exhaustive_guard():
    with pytest.raises(GuardError):
        exhaustive_fault_count(1, 0, Mode.POS_ZERO)


def test_fault_profile():
    prof = fault_profile(2**17, 18, Mode.POS_ZERO)
    assert prof.p_trunc == 0.5 and prof.x == 2**17
    assert prof.p_total == pytest.approx(prof.p_sign + (1 - prof.p_sign) * 0.5)


def test_wilson_interval():
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi
    assert wilson_interval(0, 0) == (0.0, 1.0)
    assert wilson_interval(0, 1000)[0] == pytest.approx(0.0, abs=1e-12)


def test_monte_carlo_zero_probability_point():
    r = monte_carlo_fault_rate(0, 12, Mode.POS_ZERO, samples=20_000, seed=1)
    assert r.rate == 0 and r.hits == 0


def test_monte_carlo_independent_of_sharding():
    a = monte_carlo_fault_rate(100, 8, Mode.POS_ZERO, samples=50_000, seed=3)
    b = monte_carlo_fault_rate(100, 8, Mode.POS_ZERO, samples=50_000, seed=3)
    assert a == b


def test_monte_carlo_agrees_with_analytic_sweep():
    p = P509
    xs = np.linspace(-250, 250, 50).astype(int)
    for x in xs:
        r = monte_carlo_fault_rate(int(x), 4, Mode.POS_ZERO, p, samples=100_000, seed=0)
        exact = predicted_fault_count(int(x), 4, Mode.POS_ZERO, p) / p.p
        sigma = max(np.sqrt(exact * (1 - exact) / r.samples), 1e-9)
        assert abs(r.rate - exact) <= 3 * sigma + 1e-12


def test_validation_rows():
    rows = list(validation_rows([-3, 0, 3], 4, Mode.POS_ZERO, P509, exhaustive=True))
    assert len(rows) == 3 and all(len(r) == len(CSV_HEADER) for r in rows)
    assert rows[2][4] == 416 / 509
    grid = default_x_grid(18)
    assert 0 in grid and max(grid) > 2**18 and min(grid) < -(2**18)
