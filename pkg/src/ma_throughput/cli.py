"""Command-line entry point: ``ma-throughput {analyze,single-user,multi-user,sweep}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

from . import experiments, movement, multiuser, single_user
from .scenario import ConfigError, load_config, sample_scenario


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(rng_seed=args.seed)
    return cfg


def _write_rows(rows: list[dict], out: str | None) -> None:
    if not rows:
        return
    stream = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.DictWriter(stream, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if out:
            stream.close()


def cmd_analyze(args) -> int:
    cfg = _config(args)
    channels = sample_scenario(cfg, args.trial)
    reports = []
    for k, ch in enumerate(channels):
        rep = movement.analyze(ch, cfg.replace(init_pos_x0=float(cfg.init_positions()[k]),
                                              k_users=1, move_speed_v=float(cfg.speeds()[k])),
                               args.kappa0)
        reports.append({"user": k, **rep})
    print(json.dumps(reports, indent=2, default=lambda o: list(o) if isinstance(o, tuple) else str(o)))
    return 0


def cmd_single_user(args) -> int:
    cfg = _config(args).replace(k_users=1)
    if args.starts is not None:
        cfg = cfg.replace(n_starts=args.starts)
    rows = []
    for trial in range(args.trials):
        ch = sample_scenario(cfg, trial)[0]
        rep = single_user.run_scheme(ch, cfg, args.scheme)
        row = {"scheme": args.scheme, "seed": cfg.rng_seed, "trial": trial,
               "x": float(rep.positions[0]), "throughput": rep.min_throughput,
               "snr": float(rep.sinr[0]), "delay_t1": rep.delay_t1, "iterations": rep.iterations}
        if args.oracle_step:
            xo, vo = single_user.grid_oracle(ch, cfg, args.oracle_step)
            row.update(oracle_x=xo, oracle_throughput=vo)
        rows.append(row)
    _write_rows(rows, args.out)
    return 0


def cmd_multi_user(args) -> int:
    cfg = _config(args)
    if args.n_rand is not None:
        cfg = cfg.replace(n_rand=args.n_rand)
    scheme = args.scheme
    if scheme.split(":", 1)[0] not in multiuser.SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}")
    rows = []
    for trial in range(args.trials):
        channels = sample_scenario(cfg, trial)
        res = multiuser.run_scheme(channels, cfg, scheme, trial=trial)
        rep = res.report
        for k in range(len(channels)):
            rows.append({"scheme": scheme, "seed": cfg.rng_seed, "trial": trial, "user": k,
                         "x": float(rep.positions[k]), "sinr": float(rep.sinr[k]),
                         "throughput": float(rep.throughput[k]), "eta": res.eta,
                         "eta_relaxed": res.recovery.eta_relaxed,
                         "rank_one_ratio": float(res.recovery.ratios[k]),
                         "delay_t1": rep.delay_t1, "iterations": res.iterations})
    _write_rows(rows, args.out)
    return 0


def cmd_sweep(args) -> int:
    spec = experiments.load_spec(args.spec)
    cfg = load_config(args.config)
    rows = experiments.run_sweep(spec, cfg)
    checks = experiments.run_checks(spec, rows)
    paths = experiments.write_outputs(args.out, spec, rows, checks)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0 if all(c.passed for c in checks) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ma-throughput", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value scenario file")
        p.add_argument("--seed", type=int)
        p.add_argument("--trials", type=int, default=1)

    p = sub.add_parser("analyze", help="closed-form movement analysis per user")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--kappa0", type=int)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("single-user", help="position one antenna")
    common(p)
    p.add_argument("--starts", type=int)
    p.add_argument("--oracle-step", type=float, help="also run the grid oracle (metres)")
    p.add_argument("--scheme", default="sca",
                   help="sca | quantized[:kappa0] | max-snr | fpa")
    p.add_argument("--out")
    p.set_defaults(func=cmd_single_user)

    p = sub.add_parser("multi-user", help="joint positions and beamforming")
    common(p)
    p.add_argument("--scheme", default="ao",
                   help="ao | quantized:<kappa0> | max-min-sinr | fpa")
    p.add_argument("--n-rand", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_multi_user)

    p = sub.add_parser("sweep", help="Monte-Carlo sweep with trend checks")
    p.add_argument("--spec", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
