"""Single-user antenna positioning by successive convex approximation.

With MRT beamforming the throughput at position x is

    C(x) = max(0, T - |x - x0|/v) * log2(1 + y3(x) / sigma^2),   y3 = P_m ||h(x)||^2.

Each SCA step maximizes a concave lower bound of C around the current
iterate: ``y3`` is bracketed by quadratic Taylor bounds with a global
curvature bound, ``2^w`` is linearized and the product ``q*w`` (distance x
rate) is replaced by its arithmetic-geometric upper bound.  The resulting
subproblem has four scalars; after eliminating ``q``, ``u`` and ``w`` (each
has a closed-form best value) it is a smooth concave problem in ``x`` alone,
solved here by root-finding on the derivative.  ``build_subproblem`` gives
the same subproblem as a conic program for cross-checking.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import conic
from .conic import SubproblemError
from .channel import channel_vector, gain_series, gain_unchecked
from .movement import candidate_interval, quantize_channel
from .report import ThroughputReport

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
EXPLORE_FRACTION = 0.01   # first-step distance slack, fraction of the region
Q_FLOOR = 1e-12           # distance slack floor, in wavelengths


def throughput_su(ch, x, cfg):
    """Delay-discounted MRT throughput (bits/Hz); vectorized over ``x``."""
    x = np.asarray(x, float)
    t2 = np.maximum(0.0, cfg.block_T - np.abs(x - cfg.x0) / cfg.v)
    snr = cfg.p_max * gain_unchecked(ch, x) / cfg.noise_power
    out = t2 * np.log2(1.0 + snr)
    return float(out) if out.ndim == 0 else out


def y3_and_derivatives(ch, x, cfg):
    """(y3, dy3/dx, delta_lb, delta_ub) where y3 = P_m * gain."""
    s = gain_series(ch).scaled(cfg.p_max)
    delta = s.curvature_bound
    val, d1 = s.value(x), s.deriv(x)
    if np.ndim(val) == 0:
        val, d1 = float(val), float(d1)
    return val, d1, delta, delta


def y3_second_derivative(ch, x, cfg):
    return gain_series(ch).scaled(cfg.p_max).deriv2(x)


@dataclass
class ScaStateSU:
    """Local point of one SCA step (SI units)."""

    x: float
    q: float
    w: float
    u: float
    y3: float
    dy3: float
    delta_lb: float
    delta_ub: float
    trace: list[float] = field(default_factory=list)

    def y3_lower(self, x):
        dx = np.asarray(x, float) - self.x
        return self.y3 + self.dy3 * dx - 0.5 * self.delta_lb * dx**2

    def y3_upper(self, x):
        dx = np.asarray(x, float) - self.x
        return self.y3 + self.dy3 * dx + 0.5 * self.delta_ub * dx**2

    def qw_upper(self, q, w):
        return 0.5 * (self.w / self.q * np.square(q) + self.q / self.w * np.square(w))

    def rate_power_lower(self, w, noise_power: float):
        """Linearization of sigma^2 (2^w - 1) at the local w."""
        c = 2.0 ** self.w
        return noise_power * (c - 1.0) + noise_power * c * (np.asarray(w, float) - self.w) * LN2


def make_state(ch, cfg, x: float, q: float) -> ScaStateSU:
    y3, dy3, dlb, dub = y3_and_derivatives(ch, x, cfg)
    w = math.log2(1.0 + y3 / cfg.noise_power)
    return ScaStateSU(x=float(x), q=float(q), w=w, u=y3, y3=y3, dy3=dy3,
                      delta_lb=dlb, delta_ub=dub)


def build_subproblem(state: ScaStateSU, ch, cfg, bounds=None) -> conic.ConvexProgram:
    """Surrogate subproblem as a conic program.

    Units: positions and distances in wavelengths (``x``, ``q``), received
    power normalized by the noise power (``u``), ``w`` in bits.  Auxiliary
    ``ell`` and ``s`` hold the log-rate and the distance-rate cost so that
    the objective ``T/ln2 * ell - s`` is linear.
    """
    lam, sig = cfg.wavelength, cfg.noise_power
    lo, hi = bounds if bounds is not None else (0.0, ch.region_len)
    xi, x0 = state.x / lam, cfg.x0 / lam
    Y, D = state.y3 / sig, state.dy3 * lam / sig
    dlb, dub = state.delta_lb * lam**2 / sig, state.delta_ub * lam**2 / sig
    qi, wi, vh = state.q / lam, state.w, cfg.v / lam
    c = 2.0 ** wi

    p = conic.ConvexProgram(tol=cfg.solver_tol)
    p.add_scalar("x", lo / lam, hi / lam)
    p.add_scalar("q", 0.0, cfg.v * cfg.block_T / lam)
    p.add_scalar("u")
    p.add_scalar("w")
    p.add_scalar("ell")
    p.add_scalar("s")
    p.objective = conic.aff(ell=cfg.block_T / LN2, s=-1.0)
    p.add(conic.LogCon(conic.aff(ell=1.0), 1.0, conic.aff(1.0, u=1.0), name="log_rate"))
    p.add(conic.QuadCon(conic.aff(s=1.0), [(wi / qi / (2 * vh), conic.aff(q=1.0)),
                                           (qi / wi / (2 * vh), conic.aff(w=1.0))],
                        name="qw_upper"))
    dx = conic.aff(-xi, x=1.0)
    p.add(conic.QuadCon(conic.aff(Y - D * xi, x=D, u=-1.0), [(dlb / 2, dx)], name="u_le_y3_lower"))
    p.add(conic.QuadCon(conic.aff(c - 1.0 - c * LN2 * wi - Y + D * xi, w=c * LN2, x=-D),
                        [(dub / 2, dx)], name="w_ge_rate_of_y3_upper"))
    p.add(conic.AffineCon(conic.aff(x0, q=1.0, x=-1.0), name="q_ge_dx"))
    p.add(conic.AffineCon(conic.aff(-x0, q=1.0, x=1.0), name="q_ge_neg_dx"))
    return p


@dataclass
class StepResult:
    x: float
    q: float
    u: float
    w: float
    value: float


def solve_subproblem_exact(state: ScaStateSU, ch, cfg, bounds=None) -> StepResult:
    """Exact optimum of the surrogate subproblem via its 1-D concave reduction."""
    sig, T, v, x0 = cfg.noise_power, cfg.block_T, cfg.v, cfg.x0
    Y, D = state.y3 / sig, state.dy3 / sig
    dlb, dub = state.delta_lb / sig, state.delta_ub / sig
    xi, qi, wi = state.x, state.q, state.w
    a, b = wi / qi, qi / wi
    c = 2.0 ** wi
    lo, hi = bounds if bounds is not None else (0.0, ch.region_len)
    lo, hi = max(lo, x0 - v * T), min(hi, x0 + v * T)
    if lo > hi:
        raise SubproblemError("empty feasible interval")

    # 1 + y3_lower > 0 on an interval around the local point
    if dlb > 0:
        disc = math.sqrt(D * D + 2.0 * dlb * (Y + 1.0))
        r_lo, r_hi = xi + (D - disc) / dlb, xi + (D + disc) / dlb
    elif D > 0:
        r_lo, r_hi = xi - (Y + 1.0) / D, math.inf
    elif D < 0:
        r_lo, r_hi = -math.inf, xi - (Y + 1.0) / D
    else:
        r_lo, r_hi = -math.inf, math.inf
    pad = 1e-9 * (r_hi - r_lo) if math.isfinite(r_hi - r_lo) else 0.0
    lo, hi = max(lo, r_lo + pad), min(hi, r_hi - pad)
    if lo > hi:
        raise SubproblemError("surrogate log argument not positive on feasible set")

    def parts(x):
        dx = x - xi
        ylb = Y + D * dx - 0.5 * dlb * dx * dx
        yub = Y + D * dx + 0.5 * dub * dx * dx
        wlb = wi + (yub - c + 1.0) / (c * LN2)
        return dx, ylb, yub, max(wlb, 0.0)

    def phi(x):
        _, ylb, _, w = parts(x)
        return T * math.log2(1.0 + ylb) - (a * (x - x0) ** 2 + b * w * w) / (2.0 * v)

    def dphi(x):
        dx, ylb, _, w = parts(x)
        dylb = D - dlb * dx
        dyub = D + dub * dx
        return (T / LN2 * dylb / (1.0 + ylb)
                - (a * (x - x0) + b * w * dyub / (c * LN2)) / v)

    if hi - lo <= 0.0:
        x = lo
    elif dphi(lo) <= 0.0:
        x = lo
    elif dphi(hi) >= 0.0:
        x = hi
    else:
        x = brentq(dphi, lo, hi, xtol=1e-15 * max(1.0, abs(hi)), rtol=1e-15, maxiter=200)
    _, ylb, _, w = parts(x)
    return StepResult(x=x, q=abs(x - x0), u=ylb * sig, w=w, value=phi(x))


def _solve_step(state, ch, cfg, bounds, solver):
    if solver == "exact":
        return solve_subproblem_exact(state, ch, cfg, bounds)
    sol = conic.solve_checked(build_subproblem(state, ch, cfg, bounds), state.trace)
    lam = cfg.wavelength
    x = sol.values["x"] * lam
    return StepResult(x=x, q=sol.values["q"] * lam, u=sol.values["u"] * cfg.noise_power,
                      w=sol.values["w"], value=sol.objective)


def mrt_report(ch, cfg, x: float, trace=None, iterations: int = 0) -> ThroughputReport:
    snr = cfg.p_max * gain_unchecked(ch, x) / cfg.noise_power
    t1 = abs(x - cfg.x0) / cfg.v
    t2 = max(0.0, cfg.block_T - t1)
    return ThroughputReport(sinr=np.array([snr]), throughput=np.array([t2 * math.log2(1 + snr)]),
                            delay_t1=t1, it_t2=t2, positions=np.array([x]),
                            trace=list(trace or []), iterations=iterations)


def _reachable(cfg, lo: float, hi: float) -> tuple[float, float]:
    """Part of [lo, hi] the antenna can reach within the block.

    Falls back to x0 alone when the bounds exclude every reachable point.
    """
    r_lo, r_hi = max(lo, cfg.x0 - cfg.v * cfg.block_T), min(hi, cfg.x0 + cfg.v * cfg.block_T)
    return (r_lo, r_hi) if r_lo <= r_hi else (lo, hi)


def optimize_position(ch, cfg, x_init: float | None = None, solver: str = "exact",
                      bounds=None, max_iter: int | None = None):
    """Run SCA from ``x_init`` (default x0) until the fractional objective
    increase drops below ``cfg.sca_eps``.

    The first step from a point close to x0 uses a larger distance slack
    (``EXPLORE_FRACTION`` of the region) than the tight value so the surrogate
    is not pinned at x0; that step is halved until it does not lose
    throughput.  Every later step expands around a tight point, so the
    objective trace is non-decreasing.
    """
    max_iter = cfg.sca_max_iter if max_iter is None else max_iter
    lo, hi = _reachable(cfg, *(bounds if bounds is not None else (0.0, ch.region_len)))
    x = float(np.clip(cfg.x0 if x_init is None else x_init, lo, hi))
    value = throughput_su(ch, x, cfg)
    trace = [value]
    lam = cfg.wavelength
    explore = max(abs(x - cfg.x0), EXPLORE_FRACTION * ch.region_len)
    iterations = 0
    for it in range(max_iter):
        tight = max(abs(x - cfg.x0), Q_FLOOR * lam)
        q_local = explore if it == 0 else tight
        while True:
            state = make_state(ch, cfg, x, q_local)
            state.trace = trace
            step = _solve_step(state, ch, cfg, (lo, hi), solver)
            new_value = throughput_su(ch, step.x, cfg)
            if new_value >= value or q_local <= tight * (1 + 1e-12):
                break
            q_local = max(q_local / 2.0, tight)
        iterations += 1
        if new_value < value:
            # only reachable through solver round-off; keep the better point
            break
        gain = (new_value - value) / max(abs(value), 1e-300)
        x, value = step.x, new_value
        trace.append(value)
        if gain < cfg.sca_eps:
            break
    log.debug("sca converged in %d iterations at x=%.6g (C=%.6g)", iterations, x, value)
    return x, mrt_report(ch, cfg, x, trace, iterations)


def multistart_starts(cfg, n: int, lo: float = 0.0, hi: float | None = None) -> list[float]:
    """``n`` evenly spread starts over [lo, hi], the one nearest x0 moved onto x0."""
    hi = cfg.region_len_A if hi is None else hi
    x0 = float(np.clip(cfg.x0, lo, hi))
    if n <= 1:
        return [x0]
    grid = np.linspace(lo, hi, n)
    grid[np.argmin(np.abs(grid - x0))] = x0
    return sorted(float(g) for g in grid)


def optimize_multistart(ch, cfg, n_starts: int | None = None, solver: str = "exact",
                        bounds=None):
    n_starts = cfg.n_starts if n_starts is None else n_starts
    lo, hi = _reachable(cfg, *(bounds if bounds is not None else (0.0, ch.region_len)))
    best = None
    for s in multistart_starts(cfg, n_starts, lo, hi):
        x, rep = optimize_position(ch, cfg, s, solver=solver, bounds=(lo, hi))
        key = (rep.min_throughput, -abs(x - cfg.x0))
        if best is None or key > best[0]:
            best = (key, x, rep)
    return best[1], best[2]


def mrt_beamformer(h, p_max: float) -> np.ndarray:
    h = np.asarray(getattr(h, "entries", h), complex)
    norm = np.linalg.norm(h)
    if norm == 0.0:
        raise ValueError("MRT undefined for a zero channel")
    return math.sqrt(p_max) * h / norm


def max_snr_position(ch, cfg, x_init: float | None = None, max_iter: int | None = None,
                     bounds=None):
    """Gain-only SCA baseline: maximize the quadratic minorant of y3 each step."""
    max_iter = cfg.sca_max_iter if max_iter is None else max_iter
    lo, hi = bounds if bounds is not None else (0.0, ch.region_len)
    x = float(np.clip(cfg.x0 if x_init is None else x_init, lo, hi))
    y3, dy3, delta, _ = y3_and_derivatives(ch, x, cfg)
    trace = [y3]
    it = 0
    for it in range(1, max_iter + 1):
        if delta <= 0.0:
            break
        x_new = float(np.clip(x + dy3 / delta, lo, hi))
        y_new, dy_new, _, _ = y3_and_derivatives(ch, x_new, cfg)
        if y_new < y3:
            break
        gain = (y_new - y3) / max(y3, 1e-300)
        x, y3, dy3 = x_new, y_new, dy_new
        trace.append(y3)
        if gain < cfg.sca_eps:
            break
    return x, trace, it


def grid_oracle(ch, cfg, step: float | None = None):
    """Exhaustive throughput search on {0, step, ..., A} plus x0.

    Ties (relative 1e-12) go to the point closest to x0.
    """
    step = cfg.wavelength / 1000.0 if step is None else step
    A = ch.region_len
    n = int(math.floor(A / step + 1e-9))
    xs = np.concatenate((np.arange(n + 1) * step, [cfg.x0, A]))
    xs = np.unique(np.clip(xs, 0.0, A))
    vals = throughput_su(ch, xs, cfg)
    best = vals.max()
    ties = np.flatnonzero(vals >= best - 1e-12 * abs(best))
    pick = ties[np.argmin(np.abs(xs[ties] - cfg.x0))]
    return float(xs[pick]), float(vals[pick])


SCHEMES = ("sca", "quantized", "max-snr", "fpa")


def run_scheme(ch, cfg, scheme: str, n_starts: int | None = None) -> ThroughputReport:
    """Position by ``scheme`` and report throughput on the true channel."""
    if scheme == "fpa":
        return mrt_report(ch, cfg, cfg.x0)
    if scheme == "sca":
        _, rep = optimize_multistart(ch, cfg, n_starts)
        return rep
    if scheme == "max-snr":
        x, trace, it = max_snr_position(ch, cfg)
        return mrt_report(ch, cfg, x, trace, it)
    if scheme.startswith("quantized"):
        kappa0 = int(scheme.split(":", 1)[1]) if ":" in scheme else (cfg.quant_res_kappa0 or 10)
        qch, q = quantize_channel(ch, kappa0)
        bounds = candidate_interval(q, cfg.x0, ch.region_len, cfg.wavelength)
        x, rep = optimize_multistart(qch, cfg, n_starts, bounds=bounds)
        return mrt_report(ch, cfg, x, rep.trace, rep.iterations)
    raise ValueError(f"unknown single-user scheme {scheme!r}")


def check_mrt_channel(ch, x: float, cfg) -> float:
    """|h^H w_mrt|^2 at x (equals P_m ||h||^2)."""
    h = channel_vector(ch, x).entries
    w = mrt_beamformer(h, cfg.p_max)
    return float(abs(np.vdot(h, w)) ** 2)


build_subproblem_P24 = build_subproblem
