"""Problem instances: configuration, per-user multipath channels and sampling."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class ConfigError(ValueError):
    pass


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class ScenarioConfig:
    """Physical and algorithmic parameters, in linear SI units.

    ``region_len_A`` defaults to two wavelengths and ``init_pos_x0`` to the
    middle of the region. ``move_speed_v`` and ``init_pos_x0`` accept either a
    scalar shared by all users or one value per user.
    """

    n_tx: int = 16
    k_users: int = 1
    l_paths: int = 6
    region_len_A: float | None = None
    move_speed_v: float | tuple[float, ...] = 0.1
    block_T: float = 1.5
    p_max: float = 0.01
    noise_power: float = 1e-11
    wavelength: float = 0.1
    quant_res_kappa0: int | None = None
    init_pos_x0: float | tuple[float, ...] | None = None
    pathloss_rho0: float = 10.0 ** -4.2
    pathloss_exp_xi0: float = 2.8
    user_radius_r: float = 100.0
    sca_eps: float = 1e-4
    rng_seed: int = 0
    # algorithm knobs
    n_starts: int = 1
    sca_max_iter: int = 500
    ao_max_iter: int = 100
    n_rand: int = 1000
    solver_tol: float = 1e-8

    def __post_init__(self) -> None:
        if self.region_len_A is None:
            object.__setattr__(self, "region_len_A", 2.0 * self.wavelength)
        if isinstance(self.move_speed_v, list):
            object.__setattr__(self, "move_speed_v", tuple(self.move_speed_v))
        if isinstance(self.init_pos_x0, list):
            object.__setattr__(self, "init_pos_x0", tuple(self.init_pos_x0))
        if self.init_pos_x0 is None:
            object.__setattr__(self, "init_pos_x0", self.region_len_A / 2.0)
        self.validate()

    def validate(self) -> None:
        for name in ("n_tx", "k_users", "l_paths", "n_starts", "sca_max_iter",
                     "ao_max_iter", "n_rand"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        for name in ("region_len_A", "block_T", "p_max", "noise_power", "wavelength",
                     "pathloss_rho0", "pathloss_exp_xi0", "user_radius_r", "sca_eps",
                     "solver_tol"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be strictly positive, got {value!r}")
        if self.quant_res_kappa0 is not None and int(self.quant_res_kappa0) < 1:
            raise ConfigError("quant_res_kappa0 must be a positive integer")
        speeds = np.atleast_1d(np.asarray(self.move_speed_v, dtype=float))
        if np.any(speeds <= 0):
            raise ConfigError("move_speed_v must be strictly positive")
        x0 = np.atleast_1d(np.asarray(self.init_pos_x0, dtype=float))
        if np.any(x0 < 0) or np.any(x0 > self.region_len_A):
            raise ConfigError("init_pos_x0 must lie in [0, region_len_A]")
        for arr, name in ((speeds, "move_speed_v"), (x0, "init_pos_x0")):
            if arr.size not in (1, self.k_users):
                raise ConfigError(f"{name} needs 1 or k_users={self.k_users} values")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return upa_shape(self.n_tx)

    @property
    def mean_gain(self) -> float:
        """Expected channel power gain rho0 * r^-xi0."""
        return self.pathloss_rho0 * self.user_radius_r ** (-self.pathloss_exp_xi0)

    def speeds(self, k: int | None = None) -> np.ndarray:
        k = self.k_users if k is None else k
        return np.broadcast_to(np.asarray(self.move_speed_v, dtype=float), (k,)).copy()

    def init_positions(self, k: int | None = None) -> np.ndarray:
        k = self.k_users if k is None else k
        return np.broadcast_to(np.asarray(self.init_pos_x0, dtype=float), (k,)).copy()

    @property
    def v(self) -> float:
        return float(self.speeds()[0])

    @property
    def x0(self) -> float:
        return float(self.init_positions()[0])

    def replace(self, **changes) -> "ScenarioConfig":
        # a changed region re-centres the initial position unless given explicitly
        if "region_len_A" in changes and "init_pos_x0" not in changes:
            changes["init_pos_x0"] = None
        if "wavelength" in changes and "region_len_A" not in changes:
            ratio = self.region_len_A / self.wavelength
            changes["region_len_A"] = ratio * changes["wavelength"]
            changes.setdefault("init_pos_x0", None)
        return dataclasses.replace(self, **changes)


_DB_KEYS = {
    "p_max_dbm": ("p_max", dbm_to_watt),
    "noise_dbm": ("noise_power", dbm_to_watt),
    "rho0_db": ("pathloss_rho0", db_to_linear),
}


def coerce_value(name: str, raw: str):
    ftype = {f.name: f for f in dataclasses.fields(ScenarioConfig)}[name].type
    raw = raw.strip()
    if raw.lower() in ("none", ""):
        return None
    if "," in raw:
        return tuple(float(v) for v in raw.split(",") if v.strip())
    if ftype.startswith("int"):
        return int(raw)
    return float(raw)


def parse_config_text(text: str) -> ScenarioConfig:
    """Parse the flat ``key = value`` config dialect (``#`` starts a comment)."""
    fields_ = {f.name for f in dataclasses.fields(ScenarioConfig)}
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in _DB_KEYS:
            target, conv = _DB_KEYS[key]
            values[target] = conv(float(raw))
        elif key in fields_:
            values[key] = coerce_value(key, raw)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    try:
        return ScenarioConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig()
    return parse_config_text(Path(path).read_text())


def dump_config(cfg: ScenarioConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(repr(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def upa_shape(n_tx: int) -> tuple[int, int]:
    rows = math.isqrt(n_tx)
    while n_tx % rows:
        rows -= 1
    return rows, n_tx // rows


def upa_positions(n_tx: int, wavelength: float) -> np.ndarray:
    """Half-wavelength UPA coordinates, shape (n_tx, 2), centred on the origin."""
    rows, cols = upa_shape(n_tx)
    d = wavelength / 2.0
    ys = (np.arange(rows) - (rows - 1) / 2.0) * d
    zs = (np.arange(cols) - (cols - 1) / 2.0) * d
    yy, zz = np.meshgrid(ys, zs, indexing="ij")
    return np.column_stack((yy.ravel(), zz.ravel()))


def virtual_aoa(elev, azim):
    """sin(elev) * cos(azim); works elementwise on arrays."""
    out = np.sin(elev) * np.cos(azim)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class UserChannel:
    """Multipath field-response description of one user's downlink channel.

    Virtual AoAs are cached at construction; ``virtual_aoas`` may be overridden
    (quantized channels keep the transmit side and path responses unchanged).
    """

    elev_aods: np.ndarray
    azim_aods: np.ndarray
    elev_aoas: np.ndarray
    azim_aoas: np.ndarray
    path_responses: np.ndarray
    tx_positions: np.ndarray
    wavelength: float
    region_len: float
    virtual_aoas: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        for name in ("elev_aods", "azim_aods", "elev_aoas", "azim_aoas"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), float)))
        object.__setattr__(self, "path_responses",
                           _frozen(np.asarray(self.path_responses, complex)))
        object.__setattr__(self, "tx_positions",
                           _frozen(np.asarray(self.tx_positions, float).reshape(-1, 2)))
        if self.virtual_aoas is None:
            vaoa = virtual_aoa(self.elev_aoas, self.azim_aoas)
        else:
            vaoa = self.virtual_aoas
        vaoa = np.atleast_1d(np.asarray(vaoa, float))
        if vaoa.shape != self.path_responses.shape:
            raise ValueError("virtual_aoas must have one entry per path")
        if np.any(np.abs(vaoa) > 1 + 1e-12):
            raise ValueError("virtual AoAs must lie in [-1, 1]")
        object.__setattr__(self, "virtual_aoas", _frozen(vaoa))
        # lazy import keeps scenario free of a hard dependency cycle
        from .channel import f_coefficients

        f, g = f_coefficients(self)
        object.__setattr__(self, "f_coeffs", _frozen(f))
        object.__setattr__(self, "g_const", g)

    @property
    def n_paths(self) -> int:
        return self.path_responses.size

    @property
    def n_tx(self) -> int:
        return self.tx_positions.shape[0]

    @property
    def aod_directions(self) -> np.ndarray:
        """p_l = [sin(theta) cos(phi), cos(theta)], shape (L, 2)."""
        return np.column_stack((np.sin(self.elev_aods) * np.cos(self.azim_aods),
                                np.cos(self.elev_aods)))

    def with_virtual_aoas(self, values: Sequence[float]) -> "UserChannel":
        return dataclasses.replace(self, virtual_aoas=np.asarray(values, float))

    def to_dict(self) -> dict:
        tau = self.path_responses
        return {
            "elev_aods": self.elev_aods.tolist(),
            "azim_aods": self.azim_aods.tolist(),
            "elev_aoas": self.elev_aoas.tolist(),
            "azim_aoas": self.azim_aoas.tolist(),
            "path_responses": [[float(t.real), float(t.imag)] for t in tau],
            "tx_positions": self.tx_positions.tolist(),
            "wavelength": self.wavelength,
            "region_len": self.region_len,
            "virtual_aoas": self.virtual_aoas.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UserChannel":
        d = dict(d)
        d["path_responses"] = [complex(re, im) for re, im in d["path_responses"]]
        return cls(**d)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def trial_seed_sequence(seed: int, trial: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(trial,))


def sample_user(rng: np.random.Generator, cfg: ScenarioConfig,
                x_ref: float | None = None) -> UserChannel:
    """Draw one user's paths.

    Path phases are referenced to ``x_ref`` (default the initial position):
    the drawn responses describe the channel seen at ``x_ref``.  Since the
    responses are circularly symmetric this does not change their law, but
    it makes the channel at x0 independent of the region length, so sweeps
    over the region reuse the same draws.
    """
    L = cfg.l_paths
    angles = rng.uniform(0.0, math.pi, size=(4, L))
    scale = math.sqrt(cfg.mean_gain / L / 2.0)
    tau = scale * (rng.standard_normal(L) + 1j * rng.standard_normal(L))
    x_ref = cfg.x0 if x_ref is None else x_ref
    tau = tau * np.exp(2j * math.pi / cfg.wavelength * x_ref * virtual_aoa(angles[2], angles[3]))
    return UserChannel(
        elev_aods=angles[0], azim_aods=angles[1],
        elev_aoas=angles[2], azim_aoas=angles[3],
        path_responses=tau,
        tx_positions=upa_positions(cfg.n_tx, cfg.wavelength),
        wavelength=cfg.wavelength,
        region_len=cfg.region_len_A,
    )


def sample_scenario(cfg: ScenarioConfig, trial: int = 0) -> list[UserChannel]:
    """Draw ``cfg.k_users`` independent channels.

    Each user gets its own Philox stream spawned from ``(rng_seed, trial)``,
    so users and trials never share random numbers.
    """
    streams = trial_seed_sequence(cfg.rng_seed, trial).spawn(cfg.k_users)
    refs = cfg.init_positions(cfg.k_users)
    return [sample_user(np.random.Generator(np.random.Philox(ss)), cfg, float(x))
            for ss, x in zip(streams, refs)]


def scenario_to_json(channels: Sequence[UserChannel]) -> str:
    return json.dumps([ch.to_dict() for ch in channels], sort_keys=True)


def scenario_from_json(text: str) -> list[UserChannel]:
    return [UserChannel.from_dict(d) for d in json.loads(text)]
