"""Monte-Carlo sweeps over one scenario parameter, with trend checks.

A sweep runs every (value, scheme, trial) task, writes one row per task and
summarizes the rows per (scheme, value).  Channels are drawn per (value,
trial), so all schemes of a trial see the same instance.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import multiuser, single_user
from .scenario import ConfigError, ScenarioConfig, coerce_value, dbm_to_watt, sample_scenario

log = logging.getLogger(__name__)

WORKERS_ENV = "MA_WORKERS"
MODES = ("single", "multi")
CHECKS = ("path_trend", "region_saturation", "block_trend", "user_gain")

# sweep axis name -> (config field, converter given (value, cfg))
_AXES = {
    "L": ("l_paths", lambda v, cfg: int(round(v))),
    "N": ("n_tx", lambda v, cfg: int(round(v))),
    "K": ("k_users", lambda v, cfg: int(round(v))),
    "A_over_lambda": ("region_len_A", lambda v, cfg: v * cfg.wavelength),
    "T": ("block_T", lambda v, cfg: float(v)),
    "v": ("move_speed_v", lambda v, cfg: float(v)),
    "p_max_dbm": ("p_max", lambda v, cfg: dbm_to_watt(v)),
}


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple[float, ...]
    trials: int = 50
    schemes: tuple[str, ...] = ("sca", "fpa")
    mode: str = "single"
    checks: tuple[str, ...] = ()
    name: str = "sweep"
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.param not in _AXES and self.param not in {f.name for f in fields(ScenarioConfig)}:
            raise ConfigError(f"unknown sweep parameter {self.param!r}")
        unknown = set(self.checks) - set(CHECKS)
        if unknown:
            raise ConfigError(f"unknown checks {sorted(unknown)}")
        valid = single_user.SCHEMES if self.mode == "single" else multiuser.SCHEMES
        for s in self.schemes:
            if s.split(":", 1)[0] not in valid:
                raise ConfigError(f"scheme {s!r} not available in {self.mode} mode")

    def config_for(self, cfg: ScenarioConfig, value: float) -> ScenarioConfig:
        if self.overrides:
            cfg = cfg.replace(**self.overrides)
        name, conv = _AXES.get(self.param, (self.param, lambda v, c: v))
        return cfg.replace(**{name: conv(value, cfg)})


def parse_spec_text(text: str) -> SweepSpec:
    """Parse a sweep spec in the ``key = value`` dialect.

    Keys: ``param``, ``values``, ``trials``, ``schemes``, ``mode``,
    ``check`` and ``name``; any scenario config key overrides the base
    config for this sweep.
    """
    kw: dict = {}
    overrides: dict = {}
    cfg_fields = {f.name for f in fields(ScenarioConfig)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        items = tuple(s.strip() for s in raw.split(",") if s.strip())
        if key == "values":
            kw["values"] = tuple(float(s) for s in items)
        elif key == "trials":
            kw["trials"] = int(raw)
        elif key == "schemes":
            kw["schemes"] = items
        elif key in ("check", "checks"):
            kw["checks"] = items
        elif key in ("param", "mode", "name"):
            kw[key] = raw
        elif key in cfg_fields:
            overrides[key] = coerce_value(key, raw)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    if "param" not in kw or "values" not in kw:
        raise ConfigError("sweep spec needs 'param' and 'values'")
    return SweepSpec(overrides=overrides, **kw)


def load_spec(path) -> SweepSpec:
    return parse_spec_text(Path(path).read_text())


@dataclass
class ResultRow:
    scheme: str
    param: str
    value: float
    trial: int
    seed: int
    min_throughput: float
    iterations: int
    rank_one_ratio: float
    delay_t1: float
    status: str = "ok"
    seconds: float = 0.0


RESULT_COLUMNS = [f.name for f in fields(ResultRow) if f.name != "seconds"]
TIMING_COLUMNS = ["scheme", "param", "value", "trial", "seconds"]
SUMMARY_COLUMNS = ["scheme", "param", "value", "n", "mean", "std", "mean_iterations",
                   "mean_delay_t1", "failures"]


def run_trial(spec: SweepSpec, cfg: ScenarioConfig, value: float, scheme: str,
              trial: int) -> ResultRow:
    """One task; failures become rows with a status instead of exceptions."""
    c = spec.config_for(cfg, value)
    t0 = time.perf_counter()
    row = ResultRow(scheme, spec.param, float(value), trial, c.rng_seed, 0.0, 0, math.nan, 0.0)
    try:
        channels = sample_scenario(c, trial)
        if spec.mode == "single":
            rep = single_user.run_scheme(channels[0], c, scheme)
            row.rank_one_ratio = 1.0
        else:
            res = multiuser.run_scheme(channels, c, scheme, trial=trial)
            rep = res.report
            row.rank_one_ratio = float(np.min(res.recovery.ratios))
        row.min_throughput = rep.min_throughput
        row.iterations = rep.iterations
        row.delay_t1 = rep.delay_t1
    except Exception as exc:   # recorded, not raised
        log.warning("%s value=%s trial=%d failed: %s", scheme, value, trial, exc)
        row.status = f"error:{type(exc).__name__}"
    row.seconds = time.perf_counter() - t0
    return row


def _task(args):
    return run_trial(*args)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc


def run_sweep(spec: SweepSpec, cfg: ScenarioConfig, workers: int | None = None) -> list[ResultRow]:
    """All rows of the sweep in canonical (value, scheme, trial) order."""
    workers = worker_count() if workers is None else workers
    tasks = [(spec, cfg, v, s, t) for v in spec.values for s in spec.schemes
             for t in range(spec.trials)]
    if workers <= 1:
        rows = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (8 * workers))))
    vi = {v: i for i, v in enumerate(spec.values)}
    si = {s: i for i, s in enumerate(spec.schemes)}
    rows.sort(key=lambda r: (vi[r.value], si[r.scheme], r.trial))
    return rows


# ---------------------------------------------------------------- summaries

def _ok(rows):
    return [r for r in rows if r.status == "ok"]


def _by(rows, *keys):
    out: dict = {}
    for r in rows:
        out.setdefault(tuple(getattr(r, k) for k in keys), []).append(r)
    return out


def summarize(rows: list[ResultRow]) -> list[dict]:
    out = []
    for (scheme, value), group in _by(rows, "scheme", "value").items():
        good = _ok(group)
        tp = np.array([r.min_throughput for r in good])
        out.append({
            "scheme": scheme, "param": group[0].param, "value": value, "n": len(good),
            "mean": float(tp.mean()) if tp.size else math.nan,
            "std": float(tp.std(ddof=1)) if tp.size > 1 else 0.0,
            "mean_iterations": float(np.mean([r.iterations for r in good])) if good else math.nan,
            "mean_delay_t1": float(np.mean([r.delay_t1 for r in good])) if good else math.nan,
            "failures": len(group) - len(good),
        })
    return out


def compare_schemes(rows: list[ResultRow], baseline: str = "fpa") -> dict:
    """Per swept value: means, ranking, and per-scheme comparison with ``baseline``.

    ``win_rate`` counts trials where the scheme is strictly better than the
    baseline on the same instance; ``nonloss_rate`` also counts ties.
    """
    result: dict = {}
    for (value,), group in _by(_ok(rows), "value").items():
        per = _by(group, "scheme")
        means = {s: float(np.mean([r.min_throughput for r in rs])) for (s,), rs in per.items()}
        entry: dict = {"mean": means,
                       "ranking": sorted(means, key=lambda s: (-means[s], s))}
        base = {r.trial: r.min_throughput for r in per.get((baseline,), [])}
        if base:
            win, nonloss, gain = {}, {}, {}
            for (s,), rs in per.items():
                pairs = [(r.min_throughput, base[r.trial]) for r in rs if r.trial in base]
                win[s] = float(np.mean([a > b for a, b in pairs])) if pairs else math.nan
                nonloss[s] = float(np.mean([a >= b for a, b in pairs])) if pairs else math.nan
                m0 = means[baseline]
                gain[s] = (means[s] - m0) / m0 if m0 > 0 else (0.0 if means[s] == m0 else math.inf)
            entry.update(win_rate=win, nonloss_rate=nonloss, relative_gain=gain)
        result[value] = entry
    return result


# ---------------------------------------------------------------- checks

@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _series(cmp: dict, scheme: str, values) -> np.ndarray:
    return np.array([cmp[v]["mean"].get(scheme, math.nan) for v in values])


def check_block_trend(cmp, values, sca="sca") -> CheckResult:
    """Short blocks leave no room to move; the MA gain grows with T."""
    values = sorted(values)
    s, f = _series(cmp, sca, values), _series(cmp, "fpa", values)
    m = _series(cmp, "max-snr", values)
    close = abs(s[0] - f[0]) <= 0.005 * f[0]
    gain = s - f
    monotone = bool(np.all(np.diff(gain) >= -1e-12))
    below = bool(m[0] < f[0]) if not math.isnan(m[0]) else True
    ok = close and monotone and below
    return CheckResult("block_trend", ok, f"rel_gap_at_min={(s[0] - f[0]) / f[0]:.3e} gain={np.round(gain, 6).tolist()} "
                                   f"maxsnr_below_fpa={below}")


def check_path_trend(cmp, values) -> CheckResult:
    """Every scheme's mean grows with the number of paths."""
    values = sorted(values)
    schemes = sorted(cmp[values[0]]["mean"])
    rho = {}
    for s in schemes:
        means = _series(cmp, s, values)
        rho[s] = float(spearmanr(values, means).statistic) if np.ptp(means) > 0 else 1.0
    ok = all(r > 0.9 for r in rho.values())
    return CheckResult("path_trend", ok, f"spearman={rho}")


def saturation_index(means: np.ndarray, tol: float = 0.03) -> int:
    """First index from which the mean never rises more than ``tol`` above it."""
    for i in range(len(means)):
        if np.max(means[i:]) <= (1.0 + tol) * means[i]:
            return i
    return len(means) - 1


def check_region_saturation(cmp, values, sca="sca") -> CheckResult:
    """Throughput saturates in the region size; gain-only positioning can lose to FPA."""
    values = sorted(values)
    s = _series(cmp, sca, values)
    i = saturation_index(s)
    tail = s[i:]
    spread = float((tail.max() - tail.min()) / tail.max())
    saturated = i <= len(values) - 2 and spread < 0.03
    m, f = _series(cmp, "max-snr", values), _series(cmp, "fpa", values)
    nonmono = bool(np.any(np.diff(m) < 0) and np.any(np.diff(m) > 0))
    below = bool(np.any(m < f))
    ok = saturated and (nonmono or below)
    return CheckResult("region_saturation", ok, f"saturation_at={values[i]} spread={spread:.4f} "
                                   f"maxsnr_nonmonotone={nonmono} maxsnr_below_fpa={below}")


def check_user_gain(cmp, values, ma="ao") -> CheckResult:
    """Joint design beats fixed positions at every point."""
    details, ok = [], True
    for v in sorted(values):
        g, w = cmp[v]["relative_gain"][ma], cmp[v]["win_rate"][ma]
        ok &= g > 0 and w >= 0.9
        details.append(f"{v}: gain={g:.4f} win={w:.2f}")
    return CheckResult("user_gain", bool(ok), "; ".join(details))


def run_checks(spec: SweepSpec, rows: list[ResultRow]) -> list[CheckResult]:
    cmp = compare_schemes(rows)
    out = []
    for name in spec.checks:
        try:
            if name == "block_trend":
                out.append(check_block_trend(cmp, spec.values))
            elif name == "path_trend":
                out.append(check_path_trend(cmp, spec.values))
            elif name == "region_saturation":
                out.append(check_region_saturation(cmp, spec.values))
            elif name == "user_gain":
                out.append(check_user_gain(cmp, spec.values))
        except KeyError as exc:
            out.append(CheckResult(name, False, f"missing scheme or value {exc}"))
    return out


# ---------------------------------------------------------------- output

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[ResultRow], columns=RESULT_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        d = asdict(r) if isinstance(r, ResultRow) else r
        w.writerow([_fmt(d[c]) for c in columns])
    return buf.getvalue()


def gnuplot_data(summary: list[dict], spec: SweepSpec) -> str:
    """Whitespace table: value, then mean and std per scheme."""
    lines = ["# " + " ".join([spec.param] + [f"{s}_mean {s}_std" for s in spec.schemes])]
    idx = {(d["scheme"], d["value"]): d for d in summary}
    for v in spec.values:
        cols = [repr(float(v))]
        for s in spec.schemes:
            d = idx.get((s, float(v)))
            cols += [repr(d["mean"]), repr(d["std"])] if d else ["nan", "nan"]
        lines.append(" ".join(cols))
    return "\n".join(lines) + "\n"


def write_outputs(out_dir, spec: SweepSpec, rows: list[ResultRow],
                  checks: list[CheckResult]) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(rows)
    paths = {
        "results": out / "results.csv",
        "timings": out / "timings.csv",
        "summary": out / "summary.csv",
        "gnuplot": out / f"{spec.name}.dat",
        "checks": out / "checks.txt",
    }
    paths["results"].write_text(rows_to_csv(rows))
    paths["timings"].write_text(rows_to_csv(rows, TIMING_COLUMNS))
    paths["summary"].write_text(rows_to_csv(summary, SUMMARY_COLUMNS))
    paths["gnuplot"].write_text(gnuplot_data(summary, spec))
    paths["checks"].write_text("".join(
        f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}\n" for c in checks))
    return paths
