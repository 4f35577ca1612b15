"""Command-line entry point: ``fdpcox <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from ._validation import per_server_budgets, split_groups
from .breslow import clip_probability, estimate_at_risk_probability, run_fdp_breslow
from .cox import ALGORITHMS, SgdParams, default_rounds, fit_private_cox
from .datagen import ConstantHazard, CoxModelSpec, read_dataset_csv, simulate, write_dataset_csv
from .experiments import PRESETS, Scenario, emit_csv, preset, run_scenario
from .privacy import CASES, audit_rows, write_audit_csv
from .survival import Dataset, ModelBounds


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _add_budget(p):
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=1e-3)
    p.add_argument("--c-z", type=float, default=1.0)
    p.add_argument("--noise-multiplier", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)


def _load(path):
    data, servers = read_dataset_csv(path)
    datasets, labels = split_groups(data, servers)
    return data, datasets, labels


def cmd_simulate(args) -> int:
    if args.config:
        with open(args.config) as fh:
            spec = CoxModelSpec.from_dict(json.load(fh))
    else:
        spec = CoxModelSpec(tuple(_floats(args.beta0)), ConstantHazard(args.hazard_rate), args.censoring_rate)
    parts = [simulate(spec, args.n, args.seed, "server", s) for s in range(args.servers)]
    time = np.concatenate([p.time for p in parts])
    event = np.concatenate([p.event for p in parts])
    cov = np.vstack([p.covariates for p in parts])
    labels = np.repeat(np.arange(args.servers), args.n) if args.servers > 1 else None
    write_dataset_csv(Dataset(time, event, cov), args.out, labels)
    print(f"wrote {time.size} records to {args.out}")
    return 0


def cmd_fit_beta(args) -> int:
    data, datasets, labels = _load(args.data)
    bounds = ModelBounds(args.c_z, args.c_beta)
    for part in datasets:
        part.check_bounds(bounds)
    rounds = args.rounds or default_rounds(data.n, data.dimension, args.rounds_constant)
    params = SgdParams(rounds, args.step_size, bounds, args.noise_multiplier)
    budgets = per_server_budgets(args.epsilon, args.delta, len(datasets))
    result = fit_private_cox(args.algorithm, datasets, budgets, params, args.seed)
    out = result.to_dict()
    out.update(algorithm=args.algorithm, rounds=rounds, servers=[None if x is None else str(x) for x in labels])
    text = json.dumps(out, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    if args.transcript:
        result.transcript.write_jsonl(args.transcript)
    return 0


def _beta_from(args, d: int) -> np.ndarray:
    if args.beta_json:
        with open(args.beta_json) as fh:
            beta = np.asarray(json.load(fh)["beta_hat"], dtype=float)
    elif args.beta:
        beta = np.asarray(_floats(args.beta))
    else:
        beta = np.zeros(d)
    if beta.shape != (d,):
        raise SystemExit(f"coefficient has length {beta.size}, data has {d} covariates")
    return beta


def cmd_fit_hazard(args) -> int:
    data, datasets, labels = _load(args.data)
    budgets = per_server_budgets(args.epsilon, args.delta, len(datasets))
    beta = _beta_from(args, data.dimension)
    if args.p_hat is not None:
        p_hat = args.p_hat
    elif args.p_data:
        _, p_sets, _ = _load(args.p_data)
        p_budgets = per_server_budgets(args.epsilon, args.delta, len(p_sets))
        p_hat = estimate_at_risk_probability(p_sets, p_budgets, (args.seed, "p"), args.noise_multiplier)
    else:
        raise SystemExit("fit-hazard needs --p-hat or --p-data (an independent dataset)")
    p_hat = clip_probability(p_hat, data.n)
    estimate = run_fdp_breslow(
        datasets, budgets, beta, p_hat, args.c_z, (args.seed, "hazard"),
        args.weight_mode, args.noise_multiplier, args.depth,
    )
    estimate.write_csv(args.out)
    if args.transcript:
        estimate.transcript.write_jsonl(args.transcript)
    print(f"depth {estimate.depth}, p_hat {p_hat:.6g}; wrote {args.out}")
    return 0


def cmd_audit(args) -> int:
    bounds = ModelBounds(args.c_z, args.c_beta)
    rows = list(audit_rows(args.n, args.d, args.trials, args.seed, bounds, args.cases))
    write_audit_csv(rows, args.out)
    bad = [r for r in rows if r["max_observed"] > r["bound"]]
    for r in rows:
        print(f"{r['case']:>15} n={r['n']:<6} bound={r['bound']:.5g} observed={r['max_observed']:.5g} "
              f"witness={r['lower_witness']:.5g}")
    return 1 if bad else 0


def cmd_experiment(args) -> int:
    if args.config:
        with open(args.config) as fh:
            scenario = Scenario.from_dict(json.load(fh))
        if args.scale is not None:
            scenario = scenario.scaled(args.scale, args.reps)
        elif args.reps:
            scenario = replace(scenario, replications=args.reps)
        if args.seed is not None:
            scenario = replace(scenario, seed=args.seed)
    elif args.preset:
        scenario = preset(args.preset, 0.1 if args.scale is None else args.scale, args.seed or 0, args.reps)
    else:
        raise SystemExit("experiment needs --preset or --config")
    if args.dump_config:
        print(scenario.to_json())
        return 0
    if not args.out:
        raise SystemExit("experiment needs --out")
    count = emit_csv(run_scenario(scenario, args.workers), args.out, args.include_runtime)
    print(f"{scenario.name}: {len(scenario.points())} grid points x {scenario.replications} reps, "
          f"{count} rows -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fdpcox", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic Cox dataset")
    p.add_argument("--n", type=int, required=True, help="records per server")
    p.add_argument("--servers", type=int, default=1)
    p.add_argument("--beta0", default="0,0.5,0.8")
    p.add_argument("--hazard-rate", type=float, default=1.0)
    p.add_argument("--censoring-rate", type=float, default=0.3)
    p.add_argument("--config", help="JSON model spec; overrides the model flags")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-beta", help="private Cox regression on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--algorithm", choices=ALGORITHMS, default="cdp")
    _add_budget(p)
    p.add_argument("--c-beta", type=float, default=1.0)
    p.add_argument("--rounds", type=int)
    p.add_argument("--rounds-constant", type=float, default=6.0)
    p.add_argument("--step-size", type=float, default=0.5)
    p.add_argument("--out")
    p.add_argument("--transcript", help="write released messages as JSON lines")
    p.set_defaults(func=cmd_fit_beta)

    p = sub.add_parser("fit-hazard", help="private baseline cumulative hazard")
    p.add_argument("--data", required=True)
    _add_budget(p)
    p.add_argument("--beta", help="comma-separated coefficients")
    p.add_argument("--beta-json", help="output file of fit-beta")
    p.add_argument("--p-hat", type=float, help="at-risk probability estimate")
    p.add_argument("--p-data", help="independent dataset for a private at-risk estimate")
    p.add_argument("--weight-mode", default="hazard-weights",
                   choices=("hazard-weights", "hazard-weights-literal", "beta-weights"))
    p.add_argument("--depth", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--transcript")
    p.set_defaults(func=cmd_fit_hazard)

    p = sub.add_parser("audit-sensitivity", help="empirical score sensitivity versus the bound")
    p.add_argument("--n", type=int, nargs="+", default=[5, 10, 50, 200])
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--cases", nargs="+", choices=CASES, default=list(CASES))
    p.add_argument("--c-z", type=float, default=1.0)
    p.add_argument("--c-beta", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("experiment", help="run a Monte-Carlo study and write per-replication rows")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--config", help="JSON scenario")
    p.add_argument("--scale", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--include-runtime", action="store_true")
    p.add_argument("--dump-config", action="store_true", help="print the resolved scenario and exit")
    p.add_argument("--out")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"fdpcox {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
