"""When is moving the antenna worth it?

Closed-form rules for the single-user throughput
``(T - |x - x0|/v) * log2(1 + P g(x) / sigma^2)``: one path never moves, two
paths have a sufficient stay condition, and quantized virtual AoAs give an
exact gain period that bounds where the optimum can lie.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .channel import gain_series

STAY = "must_stay"
MOVE = "movement_considered"
INCONCLUSIVE = "inconclusive"

_EPS = 1e-12


@dataclass(frozen=True)
class QuantizedAoAs:
    kappa0: int
    indices: tuple[int, ...]      # sorted, 1-based grid indices
    values: tuple[float, ...]     # sorted grid values
    mu: tuple[int, ...]
    mu_star: int
    order: tuple[int, ...]        # values[i] belongs to path order[i]

    def per_path(self) -> np.ndarray:
        """Quantized values in the original path order."""
        out = np.empty(len(self.values))
        out[list(self.order)] = self.values
        return out


@dataclass(frozen=True)
class MovementVerdict:
    must_stay: bool
    decision: str
    witness: tuple[int, int] | None
    candidate_interval: tuple[float, float]
    moving_worthwhile: bool = False   # A |v2 - v1| > lambda
    period: float = math.inf


def grid_value(kappa: int, kappa0: int) -> float:
    return -1.0 + (2 * kappa - 1) / kappa0


def quantize(values, kappa0: int) -> QuantizedAoAs:
    """Snap virtual AoAs to ``-1 + (2k-1)/kappa0``; midpoint ties go to the smaller k."""
    values = np.asarray(values, float)
    if np.any(np.abs(values) > 1 + _EPS):
        raise ValueError("virtual AoAs must lie in [-1, 1]")
    kappa0 = int(kappa0)
    real_idx = ((values + 1.0) * kappa0 + 1.0) / 2.0
    idx = np.clip(np.ceil(real_idx - 0.5 - _EPS).astype(int), 1, kappa0)
    order = np.argsort(idx, kind="stable")
    sorted_idx = idx[order]
    mu = np.diff(sorted_idx)
    nonzero = [int(m) for m in mu if m != 0]
    mu_star = reduce(math.gcd, nonzero) if nonzero else 0
    return QuantizedAoAs(
        kappa0=kappa0,
        indices=tuple(int(k) for k in sorted_idx),
        values=tuple(grid_value(int(k), kappa0) for k in sorted_idx),
        mu=tuple(int(m) for m in mu),
        mu_star=int(mu_star),
        order=tuple(int(o) for o in order),
    )


def quantize_channel(ch, kappa0: int):
    q = quantize(ch.virtual_aoas, kappa0)
    return ch.with_virtual_aoas(q.per_path()), q


def gain_period(q: QuantizedAoAs, wavelength: float) -> float:
    """Minimum period kappa0 * lambda / (2 mu*) of the gain; inf when flat."""
    if q.mu_star == 0:
        return math.inf
    return q.kappa0 * wavelength / (2.0 * q.mu_star)


def interval_from_period(period: float, x0: float, A: float) -> tuple[float, float]:
    if not math.isfinite(period):
        return (x0, x0)
    lo = max(0.0, min(x0 - period / 2.0, A - period))
    hi = min(A, max(x0 + period / 2.0, period))
    return (lo, hi)


def candidate_interval(q: QuantizedAoAs, x0: float, A: float,
                       wavelength: float) -> tuple[float, float]:
    """Interval of [0, A] that must contain the throughput-optimal position."""
    return interval_from_period(gain_period(q, wavelength), x0, A)


@dataclass(frozen=True)
class DesignRules:
    x0_interval: tuple[float, float]
    resolution_ok: bool
    empty: bool


def design_rules(q: QuantizedAoAs, A: float, wavelength: float) -> DesignRules:
    """Favourable initial-position interval and the resolution/region check."""
    if q.mu_star == 0:
        return DesignRules((0.0, A), True, False)
    half = q.kappa0 * wavelength / (4.0 * q.mu_star)
    lo, hi = half, A - half
    ok = q.kappa0 / A <= 2.0 * q.mu_star / wavelength * (1.0 + _EPS)
    if ok and hi < lo:
        # boundary case lost to rounding
        lo = hi = A / 2.0
    return DesignRules((lo, hi), ok, not ok)


def one_path_verdict(ch, cfg) -> MovementVerdict:
    if ch.n_paths != 1:
        raise ValueError(f"one_path_verdict needs L = 1, got L = {ch.n_paths}")
    x0 = cfg.x0
    return MovementVerdict(True, STAY, None, (x0, x0))


def _has_integer(lo: float, hi: float) -> int | None:
    d = math.ceil(lo - _EPS)
    return d if d <= hi + _EPS else None


def stay_witness(rate_frac: float, phase: float, x0: float, A: float) -> tuple[int | None, int | None]:
    """Integers (d1, d2) certifying a non-increasing gain on [x0, A] and a
    non-decreasing gain on [0, x0].

    ``rate_frac`` is (v2 - v1)/lambda and ``phase`` the angle of F_12.
    """
    c = phase / (2.0 * math.pi)
    at_x0 = x0 * rate_frac + c
    at_A = A * rate_frac + c
    if rate_frac > 0:
        d1 = _has_integer(at_A - 0.5, at_x0)
        d2 = _has_integer(at_x0, c + 0.5)
    else:
        d1 = _has_integer(at_x0, at_A + 0.5)
        d2 = _has_integer(c - 0.5, at_x0)
    return d1, d2


def two_path_verdict(ch, cfg) -> MovementVerdict:
    if ch.n_paths != 2:
        raise ValueError(f"two_path_verdict needs L = 2, got L = {ch.n_paths}")
    A, x0, lam = ch.region_len, cfg.x0, ch.wavelength
    diff = float(ch.virtual_aoas[1] - ch.virtual_aoas[0])
    f12 = ch.f_coeffs[0, 1]
    if abs(diff) < _EPS or abs(f12) == 0.0:
        return MovementVerdict(True, STAY, None, (x0, x0))
    worthwhile = A * abs(diff) > lam
    period = lam / abs(diff)
    d1, d2 = stay_witness(diff / lam, float(np.angle(f12)), x0, A)
    if d1 is not None and d2 is not None:
        return MovementVerdict(True, STAY, (d1, d2), (x0, x0), worthwhile, period)
    decision = MOVE if worthwhile else INCONCLUSIVE
    return MovementVerdict(False, decision, None, interval_from_period(period, x0, A),
                           worthwhile, period)


def analyze(ch, cfg, kappa0: int | None = None) -> dict:
    """Movement report for one user as a flat dict (used by the CLI)."""
    kappa0 = kappa0 or cfg.quant_res_kappa0
    A, x0, lam = ch.region_len, cfg.x0, ch.wavelength
    report: dict = {"L": ch.n_paths, "A": A, "x0": x0, "wavelength": lam}
    if ch.n_paths == 1:
        verdict = one_path_verdict(ch, cfg)
    elif ch.n_paths == 2:
        verdict = two_path_verdict(ch, cfg)
    else:
        verdict = None
    if verdict is not None:
        report.update(decision=verdict.decision, must_stay=verdict.must_stay,
                      witness=verdict.witness, moving_worthwhile=verdict.moving_worthwhile,
                      period=verdict.period, candidate_lo=verdict.candidate_interval[0],
                      candidate_hi=verdict.candidate_interval[1])
    if kappa0 and ch.n_paths >= 2:
        q = quantize(ch.virtual_aoas, kappa0)
        period = gain_period(q, lam)
        lo, hi = candidate_interval(q, x0, A, lam)
        rules = design_rules(q, A, lam)
        report.update(kappa0=kappa0, quantized_indices=q.indices, mu=q.mu, mu_star=q.mu_star,
                      quantized_period=period, quantized_candidate_lo=lo,
                      quantized_candidate_hi=hi, x0_design_lo=rules.x0_interval[0],
                      x0_design_hi=rules.x0_interval[1], resolution_ok=rules.resolution_ok)
    series = gain_series(ch)
    report["gain_at_x0"] = float(series.value(x0))
    return report
