"""Fault probabilities of the (truncated) stochastic sign test.

Shares follow ``server = x + t`` and ``client = p - t`` (mod p) for a uniform
mask ``t``, so the negated client share is ``t`` itself.  The stochastic
sign reports "negative" when ``floor(server / 2^k) <= floor(t / 2^k)``
(PosZero) or ``<`` (NegPass).

A *fault* is a disagreement with the true sign, except at ``x = 0``: there
``x * sign`` is zero whatever the test says, so no fault is counted.

Two analytic results are checked here:

* untruncated faults happen for exactly ``|x|`` of the ``p`` masks;
* truncation adds faults only on the mode's side of zero for ``|x| < 2^k``,
  with conditional probability ``(2^k - |x|) / 2^k`` when the mask's low
  bits are uniform.  ``conditioned_trunc_count`` gives the exact count over
  the finite field, which differs from that ratio by the partial block of
  ``2^k`` at the top of the range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .circuit import Mode
from .field import DEFAULT_PARAMS, FieldParams, decode

EXHAUSTIVE_LIMIT = 2**20


class GuardError(ValueError):
    pass


def stoch_sign(server_share, neg_client_share, k: int, mode: Mode):
    """1 for "non-negative", 0 for "negative"; ints or int64 arrays."""
    hi_s = np.right_shift(server_share, k)
    hi_t = np.right_shift(neg_client_share, k)
    neg = hi_s <= hi_t if Mode(mode) == Mode.POS_ZERO else hi_s < hi_t
    return 1 - np.asarray(neg, dtype=np.int64) if isinstance(neg, np.ndarray) else int(not neg)


def true_sign(x, params: FieldParams = DEFAULT_PARAMS):
    return np.where(np.asarray(x) < params.half, 1, 0) if isinstance(x, np.ndarray) else int(int(x) % params.p < params.half)


def _check_k(k: int, params: FieldParams) -> None:
    if not 0 <= k < params.m:
        raise ValueError(f"k={k} outside [0, {params.m})")


def _signed(x, params: FieldParams) -> int:
    x = int(x)
    if not -params.p < x < params.p:
        raise ValueError(f"{x} is not a field value")
    return decode(x % params.p, params)


def _in_trunc_range(x: int, k: int, mode: Mode) -> bool:
    if Mode(mode) == Mode.POS_ZERO:
        return 0 < x < 2**k
    return -(2**k) < x < 0


def p_sign_fault(x, params: FieldParams = DEFAULT_PARAMS, exact: bool = False):
    """Probability the untruncated test disagrees with the true sign: ``|x|/p``."""
    x = _signed(x, params)
    r = Fraction(abs(x), params.p)
    return r if exact else float(r)


def p_trunc_fault(x, k: int, mode: Mode, params: FieldParams = DEFAULT_PARAMS, exact: bool = False):
    """Extra fault probability from truncation, given the untruncated test was right."""
    _check_k(k, params)
    x = _signed(x, params)
    r = Fraction(2**k - abs(x), 2**k) if _in_trunc_range(x, k, mode) else Fraction(0)
    return r if exact else float(r)


def p_total_fault(x, k: int, mode: Mode, params: FieldParams = DEFAULT_PARAMS, exact: bool = False):
    ps = p_sign_fault(x, params, exact=True)
    pt = p_trunc_fault(x, k, mode, params, exact=True)
    r = ps + (1 - ps) * pt
    return r if exact else float(r)


@dataclass(frozen=True)
class FaultProfile:
    x: int
    k: int
    mode: Mode
    p_sign: float
    p_trunc: float
    p_total: float


def fault_profile(x, k: int, mode: Mode, params: FieldParams = DEFAULT_PARAMS, exact: bool = False) -> FaultProfile:
    return FaultProfile(
        _signed(x, params),
        k,
        Mode(mode),
        p_sign_fault(x, params, exact),
        p_trunc_fault(x, k, mode, params, exact),
        p_total_fault(x, k, mode, params, exact),
    )


def _low_bits_below(n: int, block: int, limit: int) -> int:
    """#{t in [0, n) : t mod block < limit}."""
    q, rem = divmod(n, block)
    return q * limit + min(rem, limit)


def conditioned_trunc_count(x, k: int, mode: Mode, params: FieldParams = DEFAULT_PARAMS) -> int:
    """Exact number of masks adding a truncation fault, over the masks where
    the untruncated test is correct.  Exact for ``k <= m - 2``."""
    _check_k(k, params)
    x = _signed(x, params)
    if not _in_trunc_range(x, k, mode):
        return 0
    block, a, p = 2**k, abs(x), params.p
    if Mode(mode) == Mode.POS_ZERO:
        # no overflow: t in [0, p - x); fault iff no carry out of the low k bits
        return _low_bits_below(p - a, block, block - a)
    # correct masks: t in [a, p); fault iff no borrow out of the low k bits
    return (p - a) - (_low_bits_below(p, block, a) - a)


def conditioned_set_size(x, params: FieldParams = DEFAULT_PARAMS) -> int:
    """Number of masks for which the untruncated test is correct."""
    x = _signed(x, params)
    return params.p - abs(x)


def predicted_fault_count(x, k: int, mode: Mode, params: FieldParams = DEFAULT_PARAMS) -> int:
    x = _signed(x, params)
    if x == 0:
        return 0
    return abs(x) + conditioned_trunc_count(x, k, mode, params)


def _guard(params: FieldParams) -> None:
    if params.p > EXHAUSTIVE_LIMIT:
        raise GuardError(f"p={params.p} too large to enumerate (limit {EXHAUSTIVE_LIMIT})")


def fault_mask(x, t: np.ndarray, k: int, mode: Mode, params: FieldParams = DEFAULT_PARAMS) -> np.ndarray:
    """Boolean fault indicator for field value ``x`` under each mask in ``t``."""
    xv = int(x) % params.p
    if xv == 0:
        return np.zeros(np.shape(t), dtype=bool)
    s = np.mod(t + xv, params.p)
    return stoch_sign(s, t, k, mode) != true_sign(xv, params)


def exhaustive_fault_count(x, k: int, mode: Mode, params: FieldParams = DEFAULT_PARAMS) -> int:
    """Count masks ``t`` in F_p for which the truncated test faults."""
    _guard(params)
    _check_k(k, params)
    t = np.arange(params.p, dtype=np.int64)
    return int(fault_mask(x, t, k, mode, params).sum())


def exhaustive_trunc_count(x, k: int, mode: Mode, params: FieldParams = DEFAULT_PARAMS) -> int:
    """Masks where truncation flips an otherwise-correct untruncated result."""
    _guard(params)
    _check_k(k, params)
    t = np.arange(params.p, dtype=np.int64)
    base = fault_mask(x, t, 0, mode, params)
    trunc = fault_mask(x, t, k, mode, params)
    return int((trunc & ~base).sum())


def wilson_interval(hits: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    phat = hits / n
    denom = 1 + z * z / n
    centre = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    # clamp so rounding never excludes the point estimate
    return max(0.0, min(phat, centre - half)), min(1.0, max(phat, centre + half))


@dataclass(frozen=True)
class MonteCarloResult:
    rate: float
    ci_low: float
    ci_high: float
    hits: int
    samples: int


def monte_carlo_fault_rate(
    x, k: int, mode: Mode, params: FieldParams = DEFAULT_PARAMS, samples: int = 100_000, seed: int = 0, shard_size: int = 1 << 18
) -> MonteCarloResult:
    """Empirical fault rate over uniformly drawn masks.

    Samples are split into fixed-size shards, each with its own child seed,
    so the result does not depend on how shards are scheduled.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    _check_k(k, params)
    n_shards = -(-samples // shard_size)
    children = np.random.SeedSequence([seed, int(x) % params.p, k, 0 if Mode(mode) == Mode.POS_ZERO else 1]).spawn(n_shards)
    hits = 0
    for i, child in enumerate(children):
        n = min(shard_size, samples - i * shard_size)
        t = np.random.default_rng(child).integers(0, params.p, size=n, dtype=np.int64)
        hits += int(fault_mask(x, t, k, mode, params).sum())
    lo, hi = wilson_interval(hits, samples)
    return MonteCarloResult(hits / samples, lo, hi, hits, samples)


CSV_HEADER = ("x", "k", "mode", "analytic_p", "empirical_p", "ci_low", "ci_high", "samples")


def default_x_grid(k: int, params: FieldParams = DEFAULT_PARAMS, n: int = 50) -> list[int]:
    """Signed test points spanning the truncation range and far beyond it."""
    top = min(params.half - 1, max(2 ** (k + 4), 64))
    mags = np.unique(np.round(np.geomspace(1, top, n // 2)).astype(np.int64))
    xs = sorted({int(v) for v in mags} | {-int(v) for v in mags} | {0})
    return xs


def validation_rows(xs, k: int, mode: Mode, params: FieldParams = DEFAULT_PARAMS, samples: int = 100_000, seed: int = 0, exhaustive: bool = False):
    mode = Mode(mode)
    for x in xs:
        analytic = p_total_fault(x, k, mode, params)
        if exhaustive:
            count = exhaustive_fault_count(x, k, mode, params)
            rate = count / params.p
            yield (x, k, mode.value, analytic, rate, rate, rate, params.p)
        else:
            r = monte_carlo_fault_rate(x, k, mode, params, samples, seed)
            yield (x, k, mode.value, analytic, r.rate, r.ci_low, r.ci_high, samples)
