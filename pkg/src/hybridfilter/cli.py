"""Command-line entry point: ``hybridfilter {henon,l96,tune,validate}``.

Progress goes to standard error; standard output carries one JSON summary (or,
for ``validate``, the pass/fail report). Exit codes: 0 success, 1 configuration
error, 2 runtime failure (including model blow-up), 3 validation failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from hybridfilter.ensemble import InvalidParameterError
from hybridfilter.harness import (
    METHODS,
    ConfigError,
    HenonConfig,
    L96Objective,
    L96RunConfig,
    STREAMS,
    _json_default,
    aggregate_trials,
    desk_preset,
    henon_config_from_dict,
    paper_preset,
    run_henon_experiment,
    run_l96_trials,
    write_summary,
)
from hybridfilter.tuner import SearchSpace, tune

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2, 3

log = logging.getLogger("hybridfilter")


def _load_json(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return data


def _prepare_out(path) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc.strerror}") from None
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")
    return path


def _emit(payload: dict):
    json.dump(payload, sys.stdout, indent=2, sort_keys=True, default=_json_default)
    sys.stdout.write("\n")


def _henon_config(args) -> HenonConfig:
    data = _load_json(args.config)
    if args.seed is not None:
        data["master_seed"] = args.seed
    if args.trials is not None:
        data["n_trials"] = args.trials
    return henon_config_from_dict(data)


def _l96_config(args) -> L96RunConfig:
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.cycles is not None:
        overrides["n_cycles"] = args.cycles
    if args.config is not None:
        data = _load_json(args.config)
        data.update(overrides)
        if args.method is not None:
            data["method"] = args.method
        return L96RunConfig.from_dict(data)
    method = args.method or "ESRF"
    if args.preset == "paper":
        return paper_preset(method, args.ensemble_size or 400, **overrides)
    if args.ensemble_size is not None:
        overrides["N"] = args.ensemble_size
    return desk_preset(method, **overrides)


def cmd_henon(args) -> int:
    cfg = _henon_config(args)
    out = _prepare_out(args.out)
    log.info("running %d Hénon trials with N = %d", cfg.n_trials, cfg.ensemble_size)
    result = run_henon_experiment(cfg, jobs=args.jobs)
    rows_path = os.path.join(out, "henon_trials.csv")
    result.write_csv(rows_path)
    payload = dict(
        experiment="henon",
        config=cfg,
        seeds=dict(master_seed=cfg.master_seed, streams=STREAMS),
        summary=result.summary(),
        outputs=dict(trials_csv=rows_path),
    )
    write_summary(os.path.join(out, "summary.json"), payload)
    _emit(payload)
    return EXIT_OK


def cmd_l96(args) -> int:
    cfg = _l96_config(args)
    out = _prepare_out(args.out)
    trials = list(range(args.trials))
    log.info("running %d %s trial(s): J = %d, N = %d, %d cycles", len(trials), cfg.method, cfg.model.J, cfg.N, cfg.n_cycles)
    results = run_l96_trials(cfg, trials, jobs=args.jobs)
    csv_paths, failures = [], []
    for res in results:
        path = os.path.join(out, f"{cfg.method}_trial{res.trial:03d}.csv")
        res.write_csv(path)
        csv_paths.append(path)
        if res.status != "ok":
            failures.append(dict(trial=res.trial, status=res.status, failure=res.failure, csv=path))
    payload = dict(
        experiment="l96",
        config=cfg,
        seeds=dict(master_seed=cfg.master_seed, trials=trials, streams=STREAMS),
        trials=[r.summary() for r in results],
        aggregate=aggregate_trials(results),
        failures=failures,
        outputs=dict(cycle_csv=csv_paths),
    )
    summary_path = os.path.join(out, "summary.json")
    write_summary(summary_path, payload)
    _emit(payload)
    if failures:
        print(f"error: {len(failures)} trial(s) failed; see {summary_path}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _parse_bounds(items, space: SearchSpace) -> SearchSpace:
    lower = dict(zip(space.names, space.lower))
    upper = dict(zip(space.names, space.upper))
    for item in items or []:
        try:
            name, rng = item.split("=")
            lo, hi = (float(v) for v in rng.split(":"))
        except ValueError:
            raise ConfigError(f"bad --bounds entry {item!r}; expected name=low:high") from None
        if name not in lower:
            raise ConfigError(f"unknown search parameter '{name}'; choose from {list(space.names)}")
        lower[name], upper[name] = lo, hi
    return SearchSpace(space.names, tuple(lower[n] for n in space.names), tuple(upper[n] for n in space.names))


def cmd_tune(args) -> int:
    base = _l96_config(args)
    out = _prepare_out(args.out)
    space = SearchSpace.esrf() if base.method == "ESRF" else SearchSpace.hybrid(ess=(1.5, float(base.N)))
    space = _parse_bounds(args.bounds, space)
    if base.method != "ESRF" and space.upper[space.names.index("ess_target")] > base.N:
        raise ConfigError("ess_target upper bound exceeds the ensemble size")
    ledger = os.path.join(out, "arms.jsonl")
    log.info("tuning %s over %s with budget %d", base.method, dict(zip(space.names, zip(space.lower, space.upper))), args.budget)
    result = tune(
        L96Objective(base), space, budget=args.budget, q=args.batch, rng=base.master_seed,
        n_sobol=args.sobol, trials_per_arm=args.trials_per_arm, ledger_path=ledger, jobs=args.jobs,
    )
    best = result.best
    payload = dict(
        experiment="tune",
        config=base,
        search_space=dict(names=space.names, lower=space.lower, upper=space.upper),
        settings=dict(budget=args.budget, batch=args.batch, sobol=args.sobol, trials_per_arm=args.trials_per_arm),
        seeds=dict(master_seed=base.master_seed, streams=STREAMS),
        best=dict(params=result.best_params(), mean=best.mean, stderr=best.stderr, values=best.values),
        n_arms=len(result.records),
        n_failed=sum(not r.ok for r in result.records),
        outputs=dict(ledger=ledger),
    )
    write_summary(os.path.join(out, "summary.json"), payload)
    _emit(payload)
    return EXIT_OK


def cmd_validate(args) -> int:
    from hybridfilter.validation import run_validation

    results = run_validation(args.seed or 0)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<34s} {r.detail}  ({r.seconds:.2f} s)")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VALIDATION if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridfilter", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug-level progress on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--config", help="JSON config file with the experiment's field names")
        p.add_argument("--out", default=out_default, help="output directory (default: %(default)s)")
        p.add_argument("--seed", type=int, help="override the config's master seed")
        p.add_argument("--jobs", type=int, default=1, help="maximum parallel worker processes")

    def l96_options(p):
        p.add_argument("--preset", choices=("desk", "paper"), default="desk", help="used when no --config is given")
        p.add_argument("--method", choices=METHODS)
        p.add_argument("--ensemble-size", type=int, help="ensemble size N for the preset")
        p.add_argument("--cycles", type=int, help="override the number of assimilation cycles")

    p = sub.add_parser("henon", help="single-update Hénon comparison of SIR, ESRF and the hybrid")
    common(p, "runs/henon")
    p.add_argument("--trials", type=int, help="override the number of trials")
    p.set_defaults(func=cmd_henon)

    p = sub.add_parser("l96", help="cycled two-scale Lorenz-'96 twin experiment")
    common(p, "runs/l96")
    l96_options(p)
    p.add_argument("--trials", type=int, default=1, help="number of independent trials (default: %(default)s)")
    p.set_defaults(func=cmd_l96)

    p = sub.add_parser("tune", help="Bayesian optimization of filter parameters on the L96 twin")
    common(p, "runs/tune")
    l96_options(p)
    p.add_argument("--budget", type=int, default=40, help="total number of arms (default: %(default)s)")
    p.add_argument("--batch", type=int, default=4, help="arms per BO batch (default: %(default)s)")
    p.add_argument("--sobol", type=int, default=16, help="quasirandom arms before BO (default: %(default)s)")
    p.add_argument("--trials-per-arm", type=int, default=4, help="trials averaged per arm (default: %(default)s)")
    p.add_argument("--bounds", nargs="*", metavar="NAME=LO:HI", help="override search-space bounds")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("validate", help="run the numerical self-checks")
    p.add_argument("--seed", type=int, help="seed for the randomized checks")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, InvalidParameterError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit code 2
        log.exception("run failed")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
