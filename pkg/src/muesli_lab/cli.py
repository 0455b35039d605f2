"""Command-line interface: ``muesli-lab <command>``.

Exit codes: 0 success, 1 a verification or training check failed, 2 usage or
configuration error.
"""

import argparse
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import verify
from ._validation import ValidationError
from .config import OUTPUT_DIR_ENV, RunSpec, dump_config, load_config, resolve_mdp
from .oracle import aliased_closed_form, evaluate, observation_values
from .trainer import Runner, TrainingDivergedError, dumps_summary, summary, write_metrics_csv

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
AGGREGATE_COLUMNS = ("cell", "params", "status", "final_J", "greedy", "tv_max", "error")


def _load_spec(path, seed=None, overrides=()):
    spec = load_config(path) if path else RunSpec()
    extra = dict(_split_kv(o) for o in overrides)
    if seed is not None:
        extra["train.seed"] = str(seed)
    return spec.with_overrides(extra) if extra else spec


def _split_kv(text):
    if "=" not in text:
        raise ValidationError(f"expected KEY=VALUE, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v


def _train(spec, out_dir):
    """Run one configuration and write its artifacts; returns the summary dict."""
    out_dir.mkdir(parents=True, exist_ok=True)
    mdp = spec.build_mdp()
    runner = Runner(spec.train, mdp)
    result = runner.run()
    write_metrics_csv(result.history, out_dir / "metrics.csv")
    runner.save(out_dir / "checkpoint.bin")
    doc = summary(result, mdp)
    (out_dir / "results.json").write_text(dumps_summary(doc) + "\n")
    return doc


def cmd_run(args):
    spec = _load_spec(args.config, args.seed, args.set or ())
    out = spec.output_path(args.output_dir)
    doc = _train(spec, out)
    print(f"final J = {doc['final_J']:.6f}  (prior {doc['final_J_prior']:.6f})")
    for o, row in enumerate(doc["policy"]):
        print(f"pi(.|obs {o}) = " + ", ".join(f"{p:.4f}" for p in row))
    print(f"max TV(cmpo, prior) = {doc['tv_max_run']:.6f} <= bound {doc['tv_bound']:.6f}")
    print(f"artifacts written to {out}")
    return EXIT_OK if doc["tv_max_run"] <= doc["tv_bound"] + 1e-9 else EXIT_FAIL


def cmd_verify(args):
    which = args.suite
    if which == "theorem":
        checks = verify.theorem_checks(tuple(args.c) if args.c else verify.THEOREM_GRID)
    elif which == "lemma":
        checks = verify.lemma_checks(args.seeds)
    elif which == "bound":
        checks = verify.bound_checks(args.seeds)
    else:
        checks = verify.gradient_checks(args.points)
    if which in ("lemma", "bound") and not args.verbose:
        passed = sum(c.passed for c in checks)
        worst = max((c.error for c in checks), default=0.0)
        print(f"{which}: {passed}/{len(checks)} within tolerance (worst error {worst:.3e})")
        for c in checks:
            if not c.passed:
                print(verify.format_table([c]).splitlines()[-1])
    else:
        print(verify.format_table(checks))
    ok = verify.all_passed(checks)
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAIL


def _parse_policy(text, num_rows, num_actions):
    rows = [r for r in text.split(";") if r.strip()]
    table = np.array([[float(x) for x in r.split(",")] for r in rows])
    if table.shape == (1, num_actions) and num_rows > 1:
        table = np.repeat(table, num_rows, axis=0)
    if table.shape != (num_rows, num_actions):
        raise ValidationError(f"policy must have {num_rows} rows of {num_actions} probabilities")
    return table


def cmd_oracle(args):
    if args.aliased_p is not None:
        vals = aliased_closed_form(args.aliased_p)
        print(json.dumps(vals._asdict(), indent=2))
        return EXIT_OK
    mdp = resolve_mdp(args.mdp)
    rows = mdp.num_states if args.per_state else mdp.num_obs
    if args.policy:
        policy = _parse_policy(args.policy, rows, mdp.num_actions)
    else:
        policy = np.full((rows, mdp.num_actions), 1.0 / mdp.num_actions)
    ev = evaluate(mdp, policy, per_state=args.per_state)
    v_obs, q_obs = observation_values(mdp, ev)
    doc = {"J": ev.J, "v": ev.v.tolist(), "q": ev.q.tolist(), "d": ev.d.tolist(),
           "v_obs": v_obs.tolist(), "q_obs": q_obs.tolist()}
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def _grid_cells(grid_args):
    axes = []
    for text in grid_args:
        key, values = _split_kv(text)
        vals = [v.strip() for v in values.split(",") if v.strip()]
        axes.append([(key, v) for v in vals])
    if not axes:
        return []
    return [dict(combo) for combo in itertools.product(*axes)]


def _run_cell(job):
    index, spec, out_dir = job
    try:
        doc = _train(spec, Path(out_dir))
        return {"cell": index, "status": "ok", "final_J": doc["final_J"],
                "greedy": " ".join(map(str, doc["greedy"])), "tv_max": doc["tv_max_run"], "error": ""}
    except (ValidationError, TrainingDivergedError, ArithmeticError) as exc:
        return {"cell": index, "status": "failed", "final_J": "", "greedy": "", "tv_max": "",
                "error": str(exc)}


def cmd_sweep(args):
    base = _load_spec(args.config, args.seed, args.set or ())
    out = base.output_path(args.output_dir)
    cells = _grid_cells(args.grid or ())
    jobs = []
    for i, cell in enumerate(cells):
        jobs.append((i, base.with_overrides(cell), str(out / f"cell_{i:03d}")))
    if args.processes > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.processes) as pool:
            rows = list(pool.map(_run_cell, jobs))
    else:
        rows = [_run_cell(j) for j in jobs]
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "aggregate.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=AGGREGATE_COLUMNS)
        writer.writeheader()
        for row, cell in zip(rows, cells):
            writer.writerow(dict(row, params=";".join(f"{k}={v}" for k, v in cell.items())))
    print(f"{'cell':>4}  {'status':<7} {'final_J':>9}  {'greedy':<10} params")
    for row, cell in zip(rows, cells):
        fj = f"{row['final_J']:.5f}" if row["status"] == "ok" else "-"
        print(f"{row['cell']:>4}  {row['status']:<7} {fj:>9}  {row['greedy']:<10} "
              + " ".join(f"{k}={v}" for k, v in cell.items()))
    print(f"{len(rows)} cells, aggregate at {out / 'aggregate.csv'}")
    return EXIT_FAIL if any(r["status"] != "ok" for r in rows) else EXIT_OK


def cmd_print_config(args):
    spec = _load_spec(args.config, args.seed)
    sys.stdout.write(dump_config(spec))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="muesli-lab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = p.add_subparsers(dest="command", required=True)

    def add_run_opts(sp, config_required):
        sp.add_argument("config", nargs=None if config_required else "?", help="INI run configuration")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--output-dir", help=f"artifact directory (else ${OUTPUT_DIR_ENV}, else config)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    sp = sub.add_parser("run", help="train one configuration")
    add_run_opts(sp, True)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("verify", help="run a verifier suite")
    sp.add_argument("suite", choices=sorted(verify.SUITES))
    sp.add_argument("--c", type=float, nargs="+", help="clipping thresholds for the theorem suite")
    sp.add_argument("--seeds", type=int, default=100, help="random MDPs for lemma/bound")
    sp.add_argument("--points", type=int, default=20, help="random points per loss for gradients")
    sp.add_argument("--verbose", action="store_true", help="print every row")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("verify-theorem", help="alias for 'verify theorem'")
    sp.add_argument("--c", type=float, nargs="+", help="clipping thresholds")
    sp.set_defaults(func=cmd_verify, suite="theorem", seeds=0, points=0, verbose=True)

    sp = sub.add_parser("oracle", help="exact policy evaluation")
    sp.add_argument("--mdp", default="aliased", help="aliased | chain:N | random:S:A:SEED | path")
    sp.add_argument("--policy", help="rows 'p1,p2,...' separated by ';' (default uniform)")
    sp.add_argument("--per-state", action="store_true", help="policy rows index states, not observations")
    sp.add_argument("--aliased-p", type=float, help="closed-form aliased-MDP values at pi(up)=P")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("sweep", help="run a grid of configurations")
    add_run_opts(sp, False)
    sp.add_argument("--grid", action="append", metavar="KEY=V1,V2", help="grid axis (repeatable)")
    sp.add_argument("--processes", type=int, default=1, help="parallel worker processes")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("print-config", help="print the effective configuration")
    sp.add_argument("config", nargs="?")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_print_config)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDivergedError, AssertionError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
