"""Command line entry point: ``ctrembed <subcommand>``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import argparse
import functools
import json
import logging
import shutil
import sys
import time
from pathlib import Path

from . import kernels
from .config import (
    apply_overrides, assign, config_hash, find_axes, load_raw, parse_run_config, path_name,
    resolve_data_path,
)
from .data import ParseError, SyntheticSpec, bayes_reference, generate_synthetic, write_tsv
from .hashing import HasherConfig, _key, hash_token
from .metrics import MetricsReport
from .models import ConfigError, plan_stages
from .modules import module_param_count
from .pipeline import load_dataset, run_config, run_dir_name, select_part, write_run
from .snapshot import SnapshotError, load_snapshot
from .training import append_ledger, expand_grid, grid_search

log = logging.getLogger("ctrembed")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _config(args):
    try:
        raw = load_raw(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    return apply_overrides(raw, args.set)


def _check_data(cfg):
    for p in (cfg.data_path, cfg.test_path):
        if p and not Path(resolve_data_path(p)).is_file():
            raise UsageError(f"data file not found: {resolve_data_path(p)}")


def cmd_train(args):
    cfg = parse_run_config(_config(args))
    _check_data(cfg)
    dataset = load_dataset(cfg)
    t0 = time.perf_counter()
    out_root = Path(args.out)
    result = run_config(cfg, dataset, dump_path=out_root / f"{run_dir_name(cfg)}.diverged.bin")
    wall = time.perf_counter() - t0
    run_dir = write_run(cfg, result, out_root)
    if result.final is not None:
        append_ledger(out_root / "ledger.jsonl", dict(
            key=run_dir.name, config=cfg.raw, seed=cfg.seed,
            metrics=result.final.to_dict(), wall_time=wall))
        print(result.final.row(cfg.model.kind))
    print(f"run directory: {run_dir}")
    return EXIT_OK


def cmd_evaluate(args):
    model, snap_echo = load_snapshot(args.snapshot)
    raw = snap_echo["config"]
    if args.data:
        raw = dict(raw, data_path=args.data, test_path=None)
    cfg = parse_run_config(raw)
    _check_data(cfg)
    data = select_part(load_dataset(cfg), args.part)
    from .training import evaluate_model

    report = evaluate_model(model, data)
    print(report.row(cfg.model.kind))
    print(report.to_json(part=args.part))
    return EXIT_OK


def _grid_run(raw, out_root, assignment):
    """Train one grid point; module-level so it can run in a worker process."""
    cfg = parse_run_config(assign(raw, assignment))
    result = run_config(cfg, load_dataset(cfg))
    run_dir = write_run(cfg, result, out_root)
    return result.final, {"run_dir": str(run_dir), "seed": cfg.seed}


def cmd_grid(args):
    raw = _config(args)
    axes = find_axes(raw)
    assignments = expand_grid(axes)
    errs = []
    cfgs = []
    for a in assignments:
        try:
            cfgs.append(parse_run_config(assign(raw, a)))
        except ConfigError as exc:
            label = ", ".join(f"{path_name(p)}={v!r}" for p, v in a.items()) or "base"
            errs += [f"[{label}] {e}" for e in exc.errors]
    if errs:
        raise ConfigError(errs)
    _check_data(cfgs[0])
    out_root = Path(args.out)
    grid_dir = out_root / f"grid-{config_hash(raw)}"
    grid_dir.mkdir(parents=True, exist_ok=True)
    print(f"{len(assignments)} configuration(s) over axes: "
          + (", ".join(path_name(p) for p in axes) or "(none)"))

    def key_fn(a):
        c = parse_run_config(assign(raw, a))
        return run_dir_name(c)

    # ledger wants JSON keys; the run function wants tuple paths
    named = [{path_name(p): v for p, v in a.items()} for a in assignments]
    back = {json.dumps(n, sort_keys=True): a for n, a in zip(named, assignments)}

    def lookup(n):
        return back[json.dumps(n, sort_keys=True)]

    run = functools.partial(_grid_named, raw, str(out_root), list(axes))
    res = grid_search(named, run, lambda n: key_fn(lookup(n)), grid_dir / "ledger.jsonl",
                      workers=args.workers)
    for r in res.runs:
        rep = MetricsReport(**r.metrics)
        tag = " (resumed)" if r.resumed else ""
        print(rep.row(", ".join(f"{k}={v}" for k, v in r.assignment.items()) or "base") + tag)
    best_dir = out_root / res.best.key
    shutil.copyfile(best_dir / "snapshot.bin", grid_dir / "best_snapshot.bin")
    print(f"best: {res.best.key}  ->  {grid_dir / 'best_snapshot.bin'}")
    return EXIT_OK


def _grid_named(raw, out_root, axes, named):
    by_name = {path_name(p): p for p in axes}
    return _grid_run(raw, out_root, {by_name[k]: v for k, v in named.items()})


def cmd_param_count(args):
    raw = _config(args)
    cfg = parse_run_config(raw, require_data=False)
    stages, _, _ = plan_stages(cfg.model)
    rows = []
    for st in stages:
        audit = module_param_count(st.spec, st.F, st.K, st.path)
        rows.append(dict(name=st.name, kind=st.spec.kind, path=st.path, F=st.F, K=st.K,
                         enumerated=audit.enumerated, table_formula=audit.table_formula,
                         match=audit.match, note=audit.note()))
    if args.json:
        print(json.dumps(rows, indent=2))
        return EXIT_OK
    if not rows:
        print("no embedding modules attached")
        return EXIT_OK
    print(f"{'module':<34} {'F':>4} {'K':>3} {'enumerated':>12} {'formula':>12}  note")
    for r in rows:
        print(f"{r['name']:<34} {r['F']:>4} {r['K']:>3} {r['enumerated']:>12} "
              f"{r['table_formula']:>12}  {r['note']}")
    return EXIT_OK


def cmd_hash_inspect(args):
    cfg = HasherConfig(args.num_bins, args.mode, args.seed)
    for tok in args.tokens:
        idx = hash_token(tok, args.position, cfg)
        raw = kernels.xxh64(_key(tok, args.position, cfg.mode), cfg.seed)
        print(f"{tok}\tposition={args.position}\tindex={idx}\txxh64=0x{raw:016x}")
    return EXIT_OK


def _pair(text):
    try:
        i, j, s = text.split(",")
        return int(i), int(j), float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected i,j,strength; got {text!r}") from None


def cmd_synth_gen(args):
    spec = SyntheticSpec(args.features, args.cardinality, args.samples, tuple(args.pair),
                         args.base_ctr, args.seed)
    write_tsv(generate_synthetic(spec), args.output)
    ref = bayes_reference(spec)
    print(f"wrote {args.samples} samples x {args.features} features to {args.output}")
    print(f"population CTR {ref.mean_ctr:.4f}; Bayes RIG {100 * ref.true_rig:.2f} %; "
          f"best additive RIG {100 * ref.additive_rig:.2f} %; gap {100 * ref.gap:.2f} pp")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="ctrembed", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config", help="JSON run configuration")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable; dotted keys for nesting)")

    sp = sub.add_parser("train", help="train one configuration")
    with_config(sp)
    sp.add_argument("--out", default="runs", help="run output root (default: runs)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="evaluate a snapshot")
    sp.add_argument("snapshot")
    sp.add_argument("--data", help="data file (default: the one in the snapshot's config)")
    sp.add_argument("--part", choices=("test", "train", "all"), default="test")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("grid", help="grid search over list-valued config keys")
    with_config(sp)
    sp.add_argument("--out", default="runs")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_grid)

    sp = sub.add_parser("param-count", help="audit embedding module sizes")
    with_config(sp)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_param_count)

    sp = sub.add_parser("hash-inspect", help="print hashed indices for tokens")
    sp.add_argument("tokens", nargs="+")
    sp.add_argument("--position", type=int, default=0)
    sp.add_argument("--num-bins", type=int, default=2 ** 22)
    sp.add_argument("--mode", choices=("whole_sample", "per_feature"), default="whole_sample")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_hash_inspect)

    sp = sub.add_parser("synth-gen", help="write a synthetic planted-pair dataset")
    sp.add_argument("output")
    sp.add_argument("--features", type=int, default=8)
    sp.add_argument("--cardinality", type=int, default=100)
    sp.add_argument("--samples", type=int, default=200000)
    sp.add_argument("--pair", type=_pair, action="append", default=[],
                    metavar="I,J,STRENGTH")
    sp.add_argument("--base-ctr", type=float, default=0.15)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth_gen)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print("invalid configuration:", file=sys.stderr)
        for e in exc.errors:
            print(f"  - {e}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SnapshotError, ParseError, OSError, FloatingPointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
