import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import direct_channel
from ma_throughput import multiuser as mu
from ma_throughput.channel import channel_vector
from ma_throughput.scenario import ScenarioConfig, UserChannel, sample_scenario, upa_positions

MU = ScenarioConfig(n_tx=4, k_users=4, l_paths=4, p_max=0.1, move_speed_v=0.15)


def _scenario(trial=0, **changes):
    cfg = MU.replace(**changes) if changes else MU
    return sample_scenario(cfg, trial), cfg


def _orthogonal_users():
    # AoD directions (0,0), (1,0), (0,1) give orthogonal responses on a 2x2 half-wavelength UPA
    dirs = [(math.pi / 2, math.pi / 2), (math.pi / 2, 0.0), (0.0, 0.0)]
    return [UserChannel(elev_aods=[e], azim_aods=[a], elev_aoas=[1.0], azim_aoas=[0.5],
                        path_responses=[(0.5 + k) * 1e-5 * (1 + 1j)],
                        tx_positions=upa_positions(4, 0.1), wavelength=0.1, region_len=0.2)
            for k, (e, a) in enumerate(dirs)]


def test_single_user_sinr_has_no_interference(rng):
    chans, cfg = _scenario(k_users=1)
    w = rng.standard_normal((4, 1)) + 1j * rng.standard_normal((4, 1))
    rep = mu.sinr_and_throughput(chans, [cfg.x0], w, cfg)
    h = channel_vector(chans[0], cfg.x0).entries
    assert rep.sinr[0] == pytest.approx(abs(np.vdot(h, w[:, 0])) ** 2 / cfg.noise_power)


def test_fixed_positions_have_no_delay(rng):
    chans, cfg = _scenario()
    w = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    rep = mu.sinr_and_throughput(chans, cfg.init_positions(), w, cfg)
    assert rep.delay_t1 == 0.0
    np.testing.assert_allclose(rep.throughput, cfg.block_T * np.log2(1 + rep.sinr))


def test_sinr_matches_direct_evaluation(rng):
    chans, cfg = _scenario(3)
    x = rng.uniform(0, cfg.region_len_A, 4)
    w = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    rep = mu.sinr_and_throughput(chans, x, w, cfg)
    for k in range(4):
        h = direct_channel(chans[k], x[k])
        p = np.abs(h.conj() @ w) ** 2
        expect = p[k] / (p.sum() - p[k] + cfg.noise_power)
        assert rep.sinr[k] == pytest.approx(expect, rel=1e-10)
    t2 = cfg.block_T - np.max(np.abs(x - cfg.x0) / cfg.v)
    assert rep.it_t2 == pytest.approx(max(t2, 0.0))


def test_orthogonal_users_with_equal_power_mrt():
    chans = _orthogonal_users()
    cfg = MU.replace(k_users=3)
    x = cfg.init_positions()
    h = np.column_stack([channel_vector(c, xk).entries for c, xk in zip(chans, x)])
    assert np.max(np.abs(h.conj().T @ h - np.diag(np.diag(h.conj().T @ h)))) < 1e-12 * np.max(np.abs(h)) ** 2
    w = np.column_stack([math.sqrt(cfg.p_max / 3) * h[:, k] / np.linalg.norm(h[:, k]) for k in range(3)])
    rep = mu.sinr_and_throughput(chans, x, w, cfg)
    expect = cfg.p_max / 3 * np.linalg.norm(h, axis=0) ** 2 / cfg.noise_power
    np.testing.assert_allclose(rep.sinr, expect, rtol=1e-10)


def test_delay_uses_slowest_user():
    cfg = MU.replace(move_speed_v=(0.1, 0.2, 0.1, 0.4))
    x = cfg.init_positions() + np.array([0.01, 0.04, -0.005, 0.08])
    assert mu.delay(x, cfg) == pytest.approx(0.2)


def test_y4_tangent(rng):
    for bi in rng.uniform(0, 5, 50):
        assert mu.y4_lower(bi, bi) == pytest.approx(math.exp(bi))
        b = rng.uniform(-2, 8, 20)
        assert np.all(mu.y4_lower(b, bi) <= np.exp(b) * (1 + 1e-12))


@given(z=st.floats(1e-4, 2), a=st.floats(1e-4, 10), zi=st.floats(1e-4, 2), ai=st.floats(1e-4, 10))
def test_y5_majorizes_product(z, a, zi, ai):
    assert mu.y5_upper(z, a, zi, ai) >= z * a * (1 - 1e-12)
    assert mu.y5_upper(zi, ai, zi, ai) == pytest.approx(zi * ai)


@given(z=st.floats(1e-4, 2), b=st.floats(1e-4, 10), zi=st.floats(1e-4, 2), bi=st.floats(1e-4, 10))
def test_y6_minorizes_product(z, b, zi, bi):
    assert mu.y6_lower(z, b, zi, bi) <= z * b * (1 + 1e-12) + 1e-300
    assert mu.y6_lower(zi, bi, zi, bi) == pytest.approx(zi * bi)


def test_rank_one_received_power_series(rng):
    chans, cfg = _scenario(1)
    w = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    w *= 0.5 / np.linalg.norm(w)
    for ch in chans:
        s = mu.received_power_series(ch, np.outer(w, w.conj()), cfg)
        for x in rng.uniform(0, cfg.region_len_A, 20):
            h = direct_channel(ch, x)
            expect = cfg.p_max / cfg.noise_power * abs(np.vdot(h, w)) ** 2
            assert s.value(x) == pytest.approx(expect, rel=1e-10)


def test_position_surrogate_sandwich(rng):
    chans, cfg = _scenario(2)
    wn = mu.initial_covariances(chans, cfg.init_positions(), cfg)
    for ch in chans:
        for wj in wn:
            s = mu.received_power_series(ch, wj, cfg)
            xi = rng.uniform(0, cfg.region_len_A)
            val, d1, delta = s.value(xi), s.deriv(xi), s.curvature_bound
            xs = rng.uniform(0, cfg.region_len_A, 1000)
            lower = val + d1 * (xs - xi) - 0.5 * delta * (xs - xi) ** 2
            upper = val + d1 * (xs - xi) + 0.5 * delta * (xs - xi) ** 2
            y = s.value(xs)
            slack = 1e-9 * max(val, 1e-30)
            assert np.all(lower <= y + slack) and np.all(y <= upper + slack)
            assert np.all(np.abs(s.deriv2(xs)) <= delta * (1 + 1e-12))


def test_received_snr_is_trace_product():
    chans, cfg = _scenario(4)
    x = cfg.init_positions()
    wn = mu.initial_covariances(chans, x, cfg)
    y = mu.received_snr(chans, x, wn, cfg)
    for k, ch in enumerate(chans):
        h = channel_vector(ch, x[k]).entries
        hn = cfg.p_max / cfg.noise_power * np.outer(h, h.conj())
        for j in range(4):
            assert y[k, j] == pytest.approx(np.real(np.trace(hn @ wn[j])), rel=1e-12)


def test_beamforming_subproblem_value_bounds_relaxed_eta():
    chans, cfg = _scenario(5)
    x = cfg.init_positions()
    wn = mu.initial_covariances(chans, x, cfg)
    _, beta = mu.rate_exponents(mu.received_snr(chans, x, wn, cfg))
    new_wn, alpha, beta_new, eta, _ = mu.solve_beamforming(chans, x, beta, cfg, cfg.block_T)
    assert sum(np.real(np.trace(w)) for w in new_wn) <= 1 + 1e-7
    # the linearized interference bound is conservative, so the true value is at least the surrogate
    assert mu.relaxed_eta(chans, x, new_wn, cfg) >= eta - 1e-6 * abs(eta)
    assert mu.relaxed_eta(chans, x, new_wn, cfg) >= mu.relaxed_eta(chans, x, wn, cfg) - 1e-9


def test_binding_users_have_active_rate_constraints():
    chans, cfg = _scenario(6)
    x = cfg.init_positions()
    wn = mu.initial_covariances(chans, x, cfg)
    _, beta = mu.rate_exponents(mu.received_snr(chans, x, wn, cfg))
    prog = mu.build_beamforming_subproblem(chans, x, beta, cfg, cfg.block_T)
    from ma_throughput import conic

    sol = conic.solve_checked(prog)
    rates = np.array([cfg.block_T / math.log(2) * (sol.values[f"a{k}"] - sol.values[f"b{k}"])
                      for k in range(4)])
    eta = sol.values["eta"]
    assert np.min(rates) == pytest.approx(eta, rel=1e-5)
    assert np.all(rates >= eta * (1 - 1e-6))


def test_single_user_beamforming_recovers_mrt():
    chans, cfg = _scenario(7, k_users=1)
    x = cfg.init_positions()
    wn, _ = mu.optimize_beamforming(chans, x, cfg)
    h = channel_vector(chans[0], x[0]).entries
    received = np.real(h.conj() @ (wn[0] * cfg.p_max) @ h)
    assert received == pytest.approx(cfg.p_max * np.linalg.norm(h) ** 2, rel=1e-3)


def test_randomization_exact_for_rank_one(rng):
    chans, cfg = _scenario(8)
    x = cfg.init_positions()
    ws = []
    for _ in range(4):
        w = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        ws.append(w * math.sqrt(cfg.p_max / 4) / np.linalg.norm(w))
    w_set = [np.outer(w, w.conj()) for w in ws]
    rep = mu.gaussian_randomization(w_set, chans, x, cfg, n_rand=50)
    assert rep.rank_one and rep.n_candidates == 1
    for k in range(4):
        v = rep.vectors[:, k]
        np.testing.assert_allclose(np.outer(v, v.conj()), w_set[k], atol=1e-8 * cfg.p_max)
    assert rep.eta == pytest.approx(rep.eta_relaxed, rel=1e-9)


def test_randomization_on_full_rank_covariances(rng):
    chans, cfg = _scenario(9)
    x = cfg.init_positions()
    w_set = []
    for _ in range(4):
        a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        w = a @ a.conj().T
        w_set.append(w * cfg.p_max / 4 / np.real(np.trace(w)))
    rep = mu.gaussian_randomization(w_set, chans, x, cfg, n_rand=200,
                                    rng=np.random.default_rng(0))
    assert not rep.rank_one and rep.n_candidates == 201
    assert np.all(rep.ratios < 1 - 1e-3)
    # arbitrary covariances are not relaxation optima, so only best-of-candidates holds
    principal = []
    for w in w_set:
        lam, u = np.linalg.eigh(w)
        principal.append(u[:, -1] * math.sqrt(lam[-1]))
    principal = np.column_stack(principal)
    principal *= math.sqrt(cfg.p_max / np.sum(np.abs(principal) ** 2))
    assert rep.eta >= mu.sinr_and_throughput(chans, x, principal, cfg).min_throughput - 1e-12
    assert rep.eta == pytest.approx(mu.sinr_and_throughput(chans, x, rep.vectors, cfg).min_throughput)
    assert np.sum(np.abs(rep.vectors) ** 2) == pytest.approx(cfg.p_max, rel=1e-9)
    again = mu.gaussian_randomization(w_set, chans, x, cfg, n_rand=200,
                                      rng=np.random.default_rng(0))
    np.testing.assert_array_equal(rep.vectors, again.vectors)


def test_fpa_eta_matches_recovered_beams():
    chans, cfg = _scenario(10)
    res = mu.run_scheme(chans, cfg, "fpa")
    rep = mu.sinr_and_throughput(chans, cfg.init_positions(), res.beams, cfg)
    assert res.eta == pytest.approx(rep.min_throughput, rel=1e-12)
    assert res.report.delay_t1 == 0.0


@pytest.mark.parametrize("trial", range(4))
def test_ao_trace_monotone_and_recovery_bounded(trial):
    chans, cfg = _scenario(trial)
    res = mu.run_scheme(chans, cfg, "ao", trial=trial)
    assert np.all(np.diff(res.trace) >= -1e-7)
    assert res.eta <= res.recovery.eta_relaxed + 1e-6
    assert np.all((res.positions >= 0) & (res.positions <= cfg.region_len_A))
    assert res.eta >= 0.9 * res.recovery.eta_relaxed


def test_ao_beats_or_ties_fixed_positions():
    wins = 0
    for trial in range(6):
        chans, cfg = _scenario(trial)
        ao = mu.run_scheme(chans, cfg, "ao", trial=trial).eta
        fpa = mu.run_scheme(chans, cfg, "fpa", trial=trial).eta
        wins += ao >= fpa
    assert wins >= 5


def test_max_min_sinr_ignores_delay_budget():
    chans, cfg = _scenario(11, block_T=0.2)
    res = mu.run_scheme(chans, cfg, "max-min-sinr")
    fpa = mu.run_scheme(chans, cfg, "fpa")
    assert res.eta <= fpa.eta + 1e-9


def test_quantized_scheme_runs_on_true_channels():
    chans, cfg = _scenario(12)
    res = mu.run_scheme(chans, cfg, "quantized:10")
    rep = mu.sinr_and_throughput(chans, res.positions, res.beams, cfg)
    assert res.eta == pytest.approx(rep.min_throughput, rel=1e-12)


def test_unknown_scheme():
    chans, cfg = _scenario()
    with pytest.raises(ValueError):
        mu.run_scheme(chans, cfg, "nope")


def test_randomization_quantile_on_desk_instances():
    hits = 0
    for trial in range(10):
        chans, cfg = _scenario(trial)
        res = mu.run_scheme(chans, cfg, "fpa", n_rand=1000, trial=trial)
        hits += res.eta >= 0.9 * res.recovery.eta_relaxed
    assert hits >= 8
