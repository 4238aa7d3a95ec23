import cmath
import math

import numpy as np
import pytest

from ma_throughput.scenario import ScenarioConfig, UserChannel, sample_scenario, upa_positions

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def direct_channel(ch, x):
    """Per-antenna, per-path loop evaluation of h(x), written from the model only."""
    lam = ch.wavelength
    out = []
    for t in ch.tx_positions:
        acc = 0j
        for l in range(ch.n_paths):
            vr = ch.virtual_aoas[l]
            p = (math.sin(ch.elev_aods[l]) * math.cos(ch.azim_aods[l]), math.cos(ch.elev_aods[l]))
            phase = 2 * math.pi / lam * (x * vr - (t[0] * p[0] + t[1] * p[1]))
            acc += ch.path_responses[l].conjugate() * cmath.exp(1j * phase)
        out.append(acc)
    return np.array(out)


def make_channel(rng, n_tx=4, n_paths=3, wavelength=0.1, region=0.2, scale=1.0):
    ang = rng.uniform(0, math.pi, size=(4, n_paths))
    tau = scale * (rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths)) / math.sqrt(2)
    return UserChannel(elev_aods=ang[0], azim_aods=ang[1], elev_aoas=ang[2], azim_aoas=ang[3],
                       path_responses=tau, tx_positions=upa_positions(n_tx, wavelength),
                       wavelength=wavelength, region_len=region)


def stay_channel(rng, cfg, n_tx=4):
    """Two-path channel meeting the stay conditions at cfg.x0.

    The conditions pin x0 * (v2 - v1) / lambda + angle(F12) / 2pi to an
    integer, so after drawing a small enough AoA gap the second response is
    rotated to put the gain peak exactly at x0.
    """
    lam, A, x0 = cfg.wavelength, cfg.region_len_A, cfg.x0
    max_gap = lam / (2.0 * max(x0, A - x0))
    while True:
        ch = make_channel(rng, n_tx=n_tx, n_paths=2, wavelength=lam, region=A)
        gap = ch.virtual_aoas[1] - ch.virtual_aoas[0]
        if 1e-6 < abs(gap) <= max_gap:
            break
    target = -2.0 * math.pi * x0 * gap / lam
    rot = cmath.exp(1j * (cmath.phase(ch.f_coeffs[0, 1]) - target))
    tau = ch.path_responses * np.array([1.0, rot])
    return UserChannel(elev_aods=ch.elev_aods, azim_aods=ch.azim_aods, elev_aoas=ch.elev_aoas,
                       azim_aoas=ch.azim_aoas, path_responses=tau, tx_positions=ch.tx_positions,
                       wavelength=lam, region_len=A)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def su_cfg():
    return ScenarioConfig()


@pytest.fixture
def mu_cfg():
    return ScenarioConfig(n_tx=4, k_users=4, l_paths=4, p_max=0.1, move_speed_v=0.15)


@pytest.fixture
def su_channel(su_cfg):
    return sample_scenario(su_cfg)[0]


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, detail: str):
        ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
