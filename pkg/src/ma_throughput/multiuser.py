"""Multiuser max-min throughput: alternating beamforming and position design.

Each outer iteration solves two convex subproblems:

* beamforming (positions fixed): semidefinite relaxation of the transmit
  covariances with the interference exponent linearized;
* positions (covariances fixed): quadratic Taylor bounds of every received
  power ``h_k(x_k)^H W_j h_k(x_k)`` plus bounds on the products
  ``zeta * alpha`` and ``zeta * beta`` that couple delay and rate.

Internally powers are normalized: ``Hn_k = P_m h_k h_k^H / sigma^2`` and
``Wn_k = W_k / P_m`` so that ``sum tr(Wn_k) <= 1`` and every received power
is an SNR.  Positions enter the position subproblem in wavelengths.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .channel import beam_coefficients, channel_vector, pair_series
from .movement import candidate_interval, quantize_channel
from .report import ThroughputReport

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
BETA_FLOOR = 1e-8
RANK_ONE_TOL = 1e-6
EXPLORE_FRACTION = 0.01    # first-step delay slack, fraction of min_k A/v_k
ZETA_FLOOR_FRACTION = 1e-9  # delay slack floor, fraction of T
MARGIN_TRIES = 8           # halvings of the looser delay expansion point

SCHEMES = ("ao", "quantized", "max-min-sinr", "fpa")


# ---------------------------------------------------------------- evaluation

def delay(x, cfg) -> float:
    x = np.asarray(x, float)
    k = x.size
    return float(np.max(np.abs(x - cfg.init_positions(k)) / cfg.speeds(k)))


def _sinr_from_powers(p: np.ndarray, noise: float) -> np.ndarray:
    """SINR per user from received powers p[..., k, j] = |h_k^H w_j|^2."""
    desired = np.diagonal(p, axis1=-2, axis2=-1)
    interference = p.sum(axis=-1) - desired
    return desired / (interference + noise)


def sinr_and_throughput(channels, x, w_vectors, cfg) -> ThroughputReport:
    """SINR, delay and delay-discounted throughput for beams ``w`` (N x K)."""
    x = np.asarray(x, float)
    w = np.asarray(w_vectors, complex).reshape(-1, len(channels))
    h = np.column_stack([channel_vector(ch, xk).entries for ch, xk in zip(channels, x)])
    p = np.abs(h.conj().T @ w) ** 2
    sinr = _sinr_from_powers(p, cfg.noise_power)
    t1 = delay(x, cfg)
    t2 = max(0.0, cfg.block_T - t1)
    return ThroughputReport(sinr=sinr, throughput=t2 * np.log2(1.0 + sinr),
                            delay_t1=t1, it_t2=t2, positions=x.copy())


def _normalized_gram(channels, x, cfg) -> list[np.ndarray]:
    out = []
    for ch, xk in zip(channels, x):
        h = channel_vector(ch, xk).entries
        out.append(cfg.p_max / cfg.noise_power * np.outer(h, h.conj()))
    return out


def received_snr(channels, x, wn, cfg) -> np.ndarray:
    """Matrix y[k, j] = tr(Hn_k Wn_j) of normalized received powers."""
    grams = _normalized_gram(channels, x, cfg)
    return np.array([[float(np.real(np.vdot(w, g))) for w in wn] for g in grams])


def rate_exponents(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tight (alpha, beta): ln(1 + total) and ln(1 + interference), floored."""
    total = y.sum(axis=1)
    interference = total - np.diag(y)
    alpha = np.log1p(np.maximum(total, 0.0))
    beta = np.maximum(np.log1p(np.maximum(interference, 0.0)), BETA_FLOOR)
    return alpha, beta


def relaxed_eta(channels, x, wn, cfg, with_delay: bool = True) -> float:
    """min_k (T - t1) log2(1 + SINR_k) for covariances Wn (normalized)."""
    y = received_snr(channels, x, wn, cfg)
    total = y.sum(axis=1)
    desired = np.diag(y)
    rate = np.log2(1.0 + desired / (1.0 + total - desired))
    t2 = max(0.0, cfg.block_T - (delay(x, cfg) if with_delay else 0.0))
    return float(t2 * rate.min())


# ---------------------------------------------------------------- surrogates

def y4_lower(beta, beta_i):
    """Tangent of exp at beta_i; a global minorant of exp(beta)."""
    return np.exp(beta_i) * (np.asarray(beta, float) - beta_i + 1.0)


def y5_upper(zeta, alpha, zeta_i, alpha_i):
    """Arithmetic-geometric majorant of zeta * alpha (positive arguments)."""
    return 0.5 * (alpha_i / zeta_i * np.square(zeta) + zeta_i / alpha_i * np.square(alpha))


def y6_lower(zeta, beta, zeta_i, beta_i):
    """Minorant of zeta * beta, linear in (ln zeta, ln beta)."""
    return zeta_i * beta_i * (1.0 + np.log(zeta) + np.log(beta)
                              - np.log(zeta_i) - np.log(beta_i))


def received_power_series(ch, wn_j, cfg):
    """Cosine series of tr(Hn_k(x) Wn_j) along the receive axis."""
    a = beam_coefficients(ch, wn_j) * (cfg.p_max / cfg.noise_power)
    return pair_series(a, ch.virtual_aoas, ch.wavelength)


# ---------------------------------------------------------------- subproblems

def build_beamforming_subproblem(channels, x, beta_i, cfg, t_eff: float) -> conic.ConvexProgram:
    """Relaxed beamforming design at fixed positions; maximizes eta.

    ``t_eff`` is the information-transmission time the rates are discounted
    by.  Variables: ``eta``, blocks ``W{k}`` and exponents ``a{k}``, ``b{k}``.
    """
    K = len(channels)
    n = channels[0].n_tx
    grams = _normalized_gram(channels, x, cfg)
    p = conic.ConvexProgram(tol=cfg.solver_tol)
    p.add_scalar("eta")
    blocks = [p.add_block(f"W{k}", n) for k in range(K)]
    for k in range(K):
        p.add_scalar(f"a{k}")
        p.add_scalar(f"b{k}", BETA_FLOOR)
    p.objective = conic.aff(eta=1.0)
    scale = t_eff / LN2
    for k in range(K):
        p.add(conic.AffineCon(conic.aff(**{f"a{k}": scale, f"b{k}": -scale, "eta": -1.0}),
                              name=f"rate{k}"))
        total = conic.Affine({}, 1.0, {b: grams[k] for b in blocks})
        p.add(conic.ExpCon(total, 1.0, conic.aff(**{f"a{k}": 1.0}), name=f"total{k}"))
        e = math.exp(beta_i[k])
        interf = conic.Affine({f"b{k}": e}, e * (1.0 - beta_i[k]) - 1.0,
                              {b: -grams[k] for j, b in enumerate(blocks) if j != k})
        p.add(conic.AffineCon(interf, name=f"interference{k}"))
    eye = np.eye(n)
    p.add(conic.AffineCon(conic.Affine({}, 1.0, {b: -eye for b in blocks}), name="power"))
    return p


@dataclass
class PositionLocal:
    x: np.ndarray          # metres
    zeta: float
    alpha: np.ndarray
    beta: np.ndarray


def build_position_subproblem(channels, wn, local: PositionLocal, cfg, bounds,
                              with_delay: bool = True) -> conic.ConvexProgram:
    """Position design at fixed covariances; maximizes eta.

    Positions ``x{k}`` are in wavelengths, ``zeta`` in seconds.  ``s{k}``
    sits between exp(alpha_k) and the minorant of the total received power;
    ``lz`` and ``lb{k}`` are hypographs of ln(zeta) and ln(beta_k).  Without
    the delay the rate constraint is simply ``T (alpha - beta) >= eta ln2``.
    """
    K = len(channels)
    lam = channels[0].wavelength
    T = cfg.block_T
    x0 = cfg.init_positions(K)
    v = cfg.speeds(K)
    p = conic.ConvexProgram(tol=cfg.solver_tol)
    p.add_scalar("eta")
    p.objective = conic.aff(eta=1.0)
    if with_delay:
        p.add_scalar("zeta", ZETA_FLOOR_FRACTION * T, T)
        p.add_scalar("lz")
        p.add(conic.LogCon(conic.aff(lz=1.0), 1.0, conic.aff(zeta=1.0), name="log_zeta"))
    for k, ch in enumerate(channels):
        xk, ak, bk, sk, lbk = f"x{k}", f"a{k}", f"b{k}", f"s{k}", f"lb{k}"
        lo, hi = bounds[k]
        p.add_scalar(xk, lo / lam, hi / lam)
        p.add_scalar(ak)
        p.add_scalar(bk, BETA_FLOOR)
        p.add_scalar(sk)
        xi = local.x[k] / lam
        dx = conic.aff(-xi, **{xk: 1.0})
        tot_c = tot_d = tot_delta = 0.0
        int_c = int_d = int_delta = 0.0
        for j in range(K):
            s = received_power_series(ch, wn[j], cfg)
            val, d1 = float(s.value(local.x[k])), float(s.deriv(local.x[k])) * lam
            delta = s.curvature_bound * lam**2
            tot_c, tot_d, tot_delta = tot_c + val, tot_d + d1, tot_delta + delta
            if j != k:
                int_c, int_d, int_delta = int_c + val, int_d + d1, int_delta + delta
        # s_k <= 1 + sum_j y_kj^lb(x_k),  s_k >= exp(alpha_k)
        p.add(conic.QuadCon(conic.aff(1.0 + tot_c - tot_d * xi, **{xk: tot_d, sk: -1.0}),
                            [(tot_delta / 2.0, dx)], name=f"total{k}"))
        p.add(conic.ExpCon(conic.aff(**{sk: 1.0}), 1.0, conic.aff(**{ak: 1.0}), name=f"exp_alpha{k}"))
        # 1 + sum_{j != k} y_kj^ub(x_k) <= tangent of exp at beta_k^i
        e = math.exp(local.beta[k])
        p.add(conic.QuadCon(
            conic.aff(e * (1.0 - local.beta[k]) - 1.0 - int_c + int_d * xi, **{bk: e, xk: -int_d}),
            [(int_delta / 2.0, dx)], name=f"interference{k}"))
        if with_delay:
            zi, ai, bi = local.zeta, local.alpha[k], local.beta[k]
            p.add_scalar(lbk)
            p.add(conic.LogCon(conic.aff(**{lbk: 1.0}), 1.0, conic.aff(**{bk: 1.0}),
                               name=f"log_beta{k}"))
            c6 = zi * bi
            lhs = conic.aff(c6 * (1.0 - math.log(zi) - math.log(bi)),
                            lz=c6, **{lbk: c6, "eta": -LN2, bk: -T, ak: T})
            p.add(conic.QuadCon(lhs, [(ai / zi / 2.0, conic.aff(zeta=1.0)),
                                      (zi / ai / 2.0, conic.aff(**{ak: 1.0}))],
                                name=f"rate{k}"))
            scale = lam / v[k]
            p.add(conic.AffineCon(conic.aff(x0[k] / v[k], zeta=1.0, **{xk: -scale}),
                                  name=f"delay_pos{k}"))
            p.add(conic.AffineCon(conic.aff(-x0[k] / v[k], zeta=1.0, **{xk: scale}),
                                  name=f"delay_neg{k}"))
        else:
            p.add(conic.AffineCon(conic.aff(**{ak: T, bk: -T, "eta": -LN2}), name=f"rate{k}"))
    return p


def solve_beamforming(channels, x, beta_i, cfg, t_eff: float, trace=()):
    """(Wn list, alpha, beta, eta, solution) for the relaxed beamforming step."""
    prog = build_beamforming_subproblem(channels, x, beta_i, cfg, t_eff)
    sol = conic.solve_checked(prog, trace)
    K = len(channels)
    wn = [_psd(sol.values[f"W{k}"]) for k in range(K)]
    total = sum(float(np.real(np.trace(w))) for w in wn)
    if total > 1.0:
        wn = [w / total for w in wn]
    alpha = np.array([sol.values[f"a{k}"] for k in range(K)])
    beta = np.array([sol.values[f"b{k}"] for k in range(K)])
    return wn, alpha, beta, sol.objective, sol


def _psd(w: np.ndarray) -> np.ndarray:
    lam, u = np.linalg.eigh(0.5 * (w + w.conj().T))
    lam = np.clip(lam, 0.0, None)
    return (u * lam) @ u.conj().T


# ---------------------------------------------------------------- recovery

@dataclass
class RankOneReport:
    ratios: np.ndarray           # lambda_1 / sum(lambda) per user
    vectors: np.ndarray          # N x K, actual (not normalized) beams
    eta: float                   # min throughput after recovery
    eta_relaxed: float           # same objective evaluated on the covariances
    rank_one: bool
    n_candidates: int = 0


def gaussian_randomization(w_set, channels, x, cfg, n_rand: int | None = None,
                           rng: np.random.Generator | None = None) -> RankOneReport:
    """Recover beams from covariances ``w_set`` (actual power units).

    Numerically rank-one covariances give their principal eigenvectors
    directly.  Otherwise ``n_rand`` Gaussian candidate sets are drawn; the
    principal-eigenvector set is kept as one extra candidate.  Every
    candidate set is scaled to total power P_m.
    """
    n_rand = cfg.n_rand if n_rand is None else n_rand
    rng = rng if rng is not None else np.random.Generator(np.random.Philox(cfg.rng_seed))
    K = len(w_set)
    x = np.asarray(x, float)
    h = np.column_stack([channel_vector(ch, xk).entries for ch, xk in zip(channels, x)])
    n = h.shape[0]
    ratios = np.empty(K)
    roots, principal = [], np.empty((n, K), complex)
    for k, w in enumerate(w_set):
        lam, u = np.linalg.eigh(0.5 * (w + w.conj().T))
        lam = np.clip(lam, 0.0, None)
        s = lam.sum()
        ratios[k] = lam[-1] / s if s > 0 else 1.0
        principal[:, k] = math.sqrt(lam[-1]) * u[:, -1]
        roots.append(u * np.sqrt(lam))
    t2 = max(0.0, cfg.block_T - delay(x, cfg))
    wn = [w / cfg.p_max for w in w_set]
    eta_relaxed = relaxed_eta(channels, x, wn, cfg)

    def normalize(c):
        power = np.sum(np.abs(c) ** 2, axis=(-2, -1), keepdims=True)
        return np.where(power > 0, c * np.sqrt(cfg.p_max / np.where(power > 0, power, 1.0)), c)

    def scores(c):
        p = np.abs(np.einsum("nk,...nj->...kj", h.conj(), c)) ** 2
        sinr = _sinr_from_powers(p, cfg.noise_power)
        return t2 * np.log2(1.0 + sinr).min(axis=-1)

    rank_one = bool(np.all(ratios > 1.0 - RANK_ONE_TOL))
    best = normalize(principal)
    best_score = float(scores(best))
    n_cand = 1
    if not rank_one and n_rand > 0:
        g = (rng.standard_normal((n_rand, n, K)) + 1j * rng.standard_normal((n_rand, n, K))) / math.sqrt(2)
        cand = np.stack([np.einsum("nm,rm->rn", roots[k], g[:, :, k]) for k in range(K)], axis=-1)
        cand = normalize(cand)
        sc = scores(cand)
        i = int(np.argmax(sc))
        n_cand += n_rand
        if sc[i] > best_score:
            best, best_score = cand[i], float(sc[i])
    return RankOneReport(ratios=ratios, vectors=best, eta=best_score,
                         eta_relaxed=eta_relaxed, rank_one=rank_one, n_candidates=n_cand)


# ---------------------------------------------------------------- drivers

@dataclass
class AoResult:
    positions: np.ndarray
    beams: np.ndarray
    eta: float
    recovery: RankOneReport
    trace: list[float]
    report: ThroughputReport
    iterations: int
    covariances: list[np.ndarray] = field(default_factory=list)


def initial_covariances(channels, x, cfg) -> list[np.ndarray]:
    """Equal-power MRT per user, normalized (sum of traces = 1)."""
    K = len(channels)
    out = []
    for ch, xk in zip(channels, x):
        h = channel_vector(ch, xk).entries
        nrm = np.linalg.norm(h)
        u = h / nrm if nrm > 0 else np.eye(h.size)[0]
        out.append(np.outer(u, u.conj()) / K)
    return out


def _tight_local(channels, x, wn, cfg, zeta: float) -> PositionLocal:
    alpha, beta = rate_exponents(received_snr(channels, x, wn, cfg))
    return PositionLocal(np.asarray(x, float).copy(), zeta, alpha, beta)


def _bounds(channels, bounds):
    if bounds is None:
        return [(0.0, ch.region_len) for ch in channels]
    return list(bounds)


def optimize_beamforming(channels, x, cfg, wn=None, t_eff=None, max_iter=None, trace=None):
    """Repeat the relaxed beamforming step at fixed ``x`` until eta stalls."""
    max_iter = cfg.ao_max_iter if max_iter is None else max_iter
    x = np.asarray(x, float)
    t_eff = max(0.0, cfg.block_T - delay(x, cfg)) if t_eff is None else t_eff
    wn = initial_covariances(channels, x, cfg) if wn is None else wn
    trace = [] if trace is None else trace
    value = relaxed_eta(channels, x, wn, cfg)
    if not trace:
        trace.append(value)
    if t_eff <= 0.0:
        return wn, trace
    for _ in range(max_iter):
        _, beta = rate_exponents(received_snr(channels, x, wn, cfg))
        new_wn, *_ = solve_beamforming(channels, x, beta, cfg, t_eff, trace)
        new_value = relaxed_eta(channels, x, new_wn, cfg)
        if new_value < value:
            break
        gain = (new_value - value) / max(abs(value), 1e-300)
        wn, value = new_wn, new_value
        trace.append(value)
        if gain < cfg.sca_eps:
            break
    return wn, trace


def alternating_optimize(channels, cfg, bounds=None, with_delay: bool = True,
                         max_iter: int | None = None, trace=None):
    """Alternate beamforming and position steps from the initial positions.

    Returns ``(x, Wn, trace, iterations)``.  The trace holds the relaxed
    objective (``relaxed_eta``) after every accepted step, so it never
    decreases.  The beamforming step expands around the tight interference
    exponents, which alone guarantees no loss.  The position step also
    tries a looser delay expansion point, since the delay-rate product
    bounds are stiff when the local delay is small.  The looser margin
    grows while it wins and shrinks otherwise.  Without the delay the
    positions chase SINR only and the trace tracks the delay-free objective.
    """
    K = len(channels)
    T = cfg.block_T
    max_iter = cfg.ao_max_iter if max_iter is None else max_iter
    bounds = _bounds(channels, bounds)
    x0 = cfg.init_positions(K)
    x = np.array([np.clip(x0[k], *bounds[k]) for k in range(K)])
    floor = ZETA_FLOOR_FRACTION * T
    margin = EXPLORE_FRACTION * min(ch.region_len / v for ch, v in zip(channels, cfg.speeds(K)))
    wn = initial_covariances(channels, x, cfg)
    trace = [] if trace is None else trace

    def objective(xx, ww):
        return relaxed_eta(channels, xx, ww, cfg, with_delay=with_delay)

    value = objective(x, wn)
    trace.append(value)
    for it in range(max_iter):
        start = value
        # beamforming step at the current positions
        zeta_now = max(delay(x, cfg), floor) if with_delay else 0.0
        t_eff = T - zeta_now
        if t_eff <= 0.0:
            log.debug("delay exhausts the block; eta = 0")
            break
        _, beta = rate_exponents(received_snr(channels, x, wn, cfg))
        new_wn, *_ = solve_beamforming(channels, x, beta, cfg, t_eff, trace)
        new_value = objective(x, new_wn)
        if new_value >= value:
            wn, value = new_wn, new_value
            trace.append(value)
        # position step: expand around the tight delay and around a looser one; keep the better
        tight = max(delay(x, cfg), floor)

        def position_step(zeta_i):
            local = _tight_local(channels, x, wn, cfg, zeta_i)
            prog = build_position_subproblem(channels, wn, local, cfg, bounds, with_delay)
            try:
                sol = conic.solve_checked(prog, trace)
            except conic.SubproblemError as exc:
                # a numerically stuck expansion is just a rejected step
                log.debug("position step skipped: %s", exc)
                return -math.inf, x
            cand = np.array([np.clip(sol.values[f"x{k}"] * channels[k].wavelength, *bounds[k])
                             for k in range(K)])
            return objective(cand, wn), cand

        new_value, new_x = position_step(tight)
        if with_delay:
            for attempt in range(MARGIN_TRIES):
                loose_value, loose_x = position_step(tight + margin)
                if loose_value > max(new_value, value):
                    new_value, new_x = loose_value, loose_x
                    if attempt == 0:
                        margin = min(2.0 * margin, T)
                    break
                margin = max(0.5 * margin, floor)
        if new_value >= value:
            x, value = new_x, new_value
            trace.append(value)
        gain = (value - start) / max(abs(start), 1e-300)
        if gain < cfg.sca_eps:
            break
    return x, wn, trace, it + 1 if max_iter else 0


def _finish(channels, x, wn, cfg, trace, iterations, n_rand, rng) -> AoResult:
    w_actual = [w * cfg.p_max for w in wn]
    rec = gaussian_randomization(w_actual, channels, x, cfg, n_rand, rng)
    rep = sinr_and_throughput(channels, x, rec.vectors, cfg)
    rep.trace = list(trace)
    rep.iterations = iterations
    return AoResult(positions=np.asarray(x, float), beams=rec.vectors, eta=rep.min_throughput,
                    recovery=rec, trace=list(trace), report=rep, iterations=iterations,
                    covariances=w_actual)


def randomization_rng(cfg, trial: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=cfg.rng_seed, spawn_key=(trial, 1))
    return np.random.Generator(np.random.Philox(ss))


def run_scheme(channels, cfg, scheme: str = "ao", n_rand: int | None = None,
               trial: int = 0) -> AoResult:
    """Positions and beams by ``scheme``; throughput always on the true channels."""
    rng = randomization_rng(cfg, trial)
    K = len(channels)
    if scheme == "ao":
        x, wn, trace, it = alternating_optimize(channels, cfg)
        wn, trace = optimize_beamforming(channels, x, cfg, wn=wn, trace=trace)
        return _finish(channels, x, wn, cfg, trace, it, n_rand, rng)
    if scheme == "max-min-sinr":
        x, wn, trace, it = alternating_optimize(channels, cfg, with_delay=False)
        wn, trace = optimize_beamforming(channels, x, cfg, wn=wn, trace=trace)
        return _finish(channels, x, wn, cfg, trace, it, n_rand, rng)
    if scheme == "fpa":
        x = cfg.init_positions(K)
        wn, trace = optimize_beamforming(channels, x, cfg)
        return _finish(channels, x, wn, cfg, trace, len(trace) - 1, n_rand, rng)
    if scheme.startswith("quantized"):
        kappa0 = int(scheme.split(":", 1)[1]) if ":" in scheme else (cfg.quant_res_kappa0 or 10)
        qchannels, bounds = [], []
        for ch, x0 in zip(channels, cfg.init_positions(K)):
            qch, q = quantize_channel(ch, kappa0)
            qchannels.append(qch)
            bounds.append(candidate_interval(q, float(x0), ch.region_len, ch.wavelength))
        x, _, trace, it = alternating_optimize(qchannels, cfg, bounds=bounds)
        wn, trace = optimize_beamforming(channels, x, cfg, trace=trace)
        return _finish(channels, x, wn, cfg, trace, it, n_rand, rng)
    raise ValueError(f"unknown multiuser scheme {scheme!r}")
