"""Command-line entry point: run, verify, calibrate, dump-circuit."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import CNRVDError
from .experiments import ExperimentConfig, aggregate, emit_results, run_trials

log = logging.getLogger("cnrvd")


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    return cfg.with_seed(args.seed) if args.seed is not None else cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    records = run_trials(cfg)
    rows = aggregate(cfg, records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = args.name or Path(args.config).stem
    csv_path = emit_results(rows, "csv", out / f"{stem}.csv")
    json_path = emit_results(rows, "json", out / f"{stem}.json", cfg, records)
    log.info("wrote %s and %s", csv_path, json_path)
    if not args.quiet:
        sys.stdout.write(csv_path.read_text())
    return 0


def cmd_verify(args) -> int:
    import pytest

    root = Path(__file__).resolve().parents[2] / "tests"
    target = [str(root)] if root.is_dir() else ["--pyargs", "cnrvd"]
    extra = ["-m", "not slow"] if args.fast else []
    return int(pytest.main(["-q", *extra, *target]))


def cmd_calibrate(args) -> int:
    from .estimators import ShotSampler, calibrate
    from .experiments import _noise_model, _observable
    from .twirling import TwirlPlan
    from .estimators import VDBackend

    cfg = _load(args)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.root_seed, 99]))
    records = []
    for N in cfg.N:
        o = _observable(cfg, N, 0)
        for n in cfg.n:
            for level in cfg.noise_levels:
                noise = _noise_model(cfg, level, rng)
                twirl = TwirlPlan(cfg.rc_instances, rng) if cfg.rc_estimators and noise is not None else None
                backend = VDBackend(n, N, noise, twirl=twirl)
                sampler = ShotSampler(cfg.total_shots, per_circuit=cfg.shots_per_circuit, rng=rng)
                rec = calibrate(o, n, N, backend, sampler)
                d = rec.to_dict()
                d["noise_level"] = level
                records.append(d)
    text = json.dumps(records, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_dump_circuit(args) -> int:
    from .circuits import build_swap_test, build_vd_circuit
    from .experiments import _noise_model
    from .twirling import compile_twirled_vd

    cfg = ExperimentConfig("random-state-sweep", N=args.N, n=args.order, noise_levels=(args.noise,),
                           noise_model=args.model)
    noise = _noise_model(cfg, args.noise, np.random.default_rng(args.seed))
    if args.swap_test:
        c = build_swap_test(args.N, noise)
    else:
        c = build_vd_circuit(args.order, args.N, args.observable, noise)
    if args.twirl:
        c = compile_twirled_vd(c, np.random.default_rng(args.seed))
    sys.stdout.write(c.dump() + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cnrvd", description="Noise-resilient virtual distillation simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config and write CSV + JSON")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None, help="override root_seed")
    r.add_argument("--out", default="results")
    r.add_argument("--name", default=None, help="output file stem (default: config file stem)")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run the oracle and invariant test suites")
    v.add_argument("--fast", action="store_true", help="skip tests marked slow")
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("calibrate", help="emit calibration records for a config")
    c.add_argument("config")
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--out", default=None)
    c.set_defaults(func=cmd_calibrate)

    d = sub.add_parser("dump-circuit", help="print a VD or SWAP-test circuit layer by layer")
    d.add_argument("--N", type=int, default=2)
    d.add_argument("--order", type=int, default=2)
    d.add_argument("--observable", default=None)
    d.add_argument("--noise", type=float, default=0.0)
    d.add_argument("--model", default="stochastic-pauli")
    d.add_argument("--twirl", action="store_true")
    d.add_argument("--swap-test", action="store_true")
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_dump_circuit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CNRVDError, OSError) as exc:
        print(f"cnrvd: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
