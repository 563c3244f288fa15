"""Command-line entry point: condense, replay, continual, gradcheck, analyze.

Every failure prints one line ``error[<kind>]: <reason>`` to stderr and
returns a nonzero exit code.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, config_from_text, parse_config
from .ddc import DivergenceError, condense_task
from .features import FeatureMap, extract, identity_feature_map, init_feature_map
from .gradcheck import format_report, run_gradchecks
from .harness import (cf_trace, cf_trace_csv, cosine_to_fake_centroid, fake_real_margin, linear_probe,
                      make_task_sequence, run_continual)
from .mcr import build_replay_set
from .memory import Memory, load_memory, memory_append, save_memory
from .numerics import FormatError, load_tensor, save_tensor, sub_rng
from .sampler import uniform_frequencies

EXIT_USAGE = 2
EXIT_FAILURE = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(path) -> ExperimentConfig:
    return parse_config(path) if path else config_from_text("")


def build_feature_map(cfg: ExperimentConfig, seed: int, dim: int | None = None) -> FeatureMap:
    dim = dim or cfg.tasks[0].dim
    out_dim = cfg.features.out_dim or dim
    if cfg.features.nonlinearity == "identity" and out_dim == dim:
        return identity_feature_map(dim)
    return init_feature_map(sub_rng(seed, "features"), dim, out_dim, cfg.features.nonlinearity)


def build_sequence(cfg: ExperimentConfig, seed: int):
    return make_task_sequence(cfg.tasks, sub_rng(seed, "data"))


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")


def _trace_csv(trace) -> str:
    return "iteration,loss\n" + "".join(f"{i},{float(v)!r}\n" for i, v in enumerate(trace))


# -- subcommands --------------------------------------------------------------


def cmd_condense(args) -> int:
    cfg = _load_config(args.config)
    seq = build_sequence(cfg, args.seed)
    if not 0 <= args.task < len(seq):
        raise ValueError(f"--task must lie in [0, {len(seq) - 1}]")
    data = seq[args.task]
    fmap = build_feature_map(cfg, args.seed)
    res = condense_task(data.train_reals, data.train_fakes, fmap, cfg.ddc, sub_rng(args.seed, f"ddc/{args.task}"),
                        data.task_id)
    memory = load_memory(args.append_to) if args.append_to else Memory()
    save_memory(memory_append(memory, res.bank), args.out)
    if args.trace:
        _write_text(Path(args.trace), _trace_csv(res.trace))
    if args.export_data:
        out = Path(args.export_data)
        out.mkdir(parents=True, exist_ok=True)
        for name in ("train_reals", "train_fakes", "test_reals", "test_fakes"):
            save_tensor(getattr(data, name), out / f"{name}.cft")
    print(f"condensed task {data.task_id}: K={res.bank.K} loss {res.trace[:10].mean() if len(res.trace) else 0:.5f}"
          f" -> {res.trace[-100:].mean() if len(res.trace) else 0:.5f}")
    return 0


def cmd_replay(args) -> int:
    cfg = _load_config(args.config)
    memory = load_memory(args.memory)
    reals = load_tensor(args.reals)
    rep = build_replay_set(memory, reals, cfg.schedule, sub_rng(args.seed, "replay"), args.n_per_task,
                           standardize=not args.no_standardize, composition=args.composition)
    save_tensor(rep.x, args.out)
    with open(args.manifest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "source_task", "map_index", "alpha"])
        for i, (t, k, a) in enumerate(rep.manifest_rows()):
            w.writerow([i, t, k, repr(a)])
    print(f"wrote {len(rep)} replay samples from {len(memory)} banks")
    return 0


def run_seed(cfg: ExperimentConfig, seed: int, out_root: Path, bank_cache: dict | None = None) -> Path:
    started = time.time()
    seq = build_sequence(cfg, seed)
    result = run_continual(seq, cfg.ddc, cfg.train, cfg.schedule, cfg.run.mode, seed, build_feature_map(cfg, seed),
                           cfg.run.n_replay_per_task, cfg.run.condense_last, bank_cache)
    result.config = cfg.as_dict()
    out = out_root / f"seed_{seed}"
    out.mkdir(parents=True, exist_ok=True)
    save_memory(result.memory, out / "memory.ddmb")
    save_tensor(result.detector.to_vector(), out / "detector.cft")
    _write_text(out / "result.json", result.to_json())
    _write_text(out / "result.csv", result.to_table())
    _write_text(out / "trace.csv", result.trace_csv())
    _write_text(out / "timestamps.json", json.dumps({"started": started, "finished": time.time()}) + "\n")
    return out


def cmd_continual(args) -> int:
    cfg = _load_config(args.config)
    out_root = Path(args.out or cfg.run.output_dir)
    seeds = args.seed if args.seed else list(cfg.run.seeds)
    for seed in seeds:
        out = run_seed(cfg, seed, out_root)
        result = json.loads((out / "result.json").read_text())
        af = result["af_history"][-1]
        print(f"seed {seed}: AA {result['aa_history'][-1]:.4f} AF {'-' if af is None else f'{af:.4f}'} -> {out}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradchecks(args.seed, args.fixtures)
    print(format_report(results))
    if not all(r.passed for r in results):
        failed = ",".join(r.name for r in results if not r.passed)
        print(f"error[gradcheck]: suites over tolerance: {failed}", file=sys.stderr)
        return EXIT_FAILURE
    return 0


def cmd_analyze(args) -> int:
    cfg = _load_config(args.config)
    memory = load_memory(args.memory)
    carriers = load_tensor(args.carriers)
    old_reals = load_tensor(args.old_reals)
    old_fakes = load_tensor(args.old_fakes)
    fmap = build_feature_map(cfg, args.seed, carriers.shape[1])
    test = None
    if args.test_reals or args.test_fakes:
        if not (args.test_reals and args.test_fakes):
            raise ValueError("--test-reals and --test-fakes go together")
        tr, tf = load_tensor(args.test_reals), load_tensor(args.test_fakes)
        test = (np.concatenate([tr, tf]), np.r_[np.zeros(len(tr)), np.ones(len(tf))])
    fake_feat, real_feat = extract(fmap, old_fakes), extract(fmap, old_reals)
    report = []
    for bank in memory.banks:
        rep = build_replay_set(Memory((bank,)), carriers, cfg.schedule, sub_rng(args.seed, f"analyze/{bank.task_id}"),
                               args.n_per_task)
        rf = extract(fmap, rep.x)
        row = {"task": bank.task_id, "cosine_to_fake_centroid": cosine_to_fake_centroid(rf, fake_feat),
               "fake_real_margin": fake_real_margin(rf, fake_feat, real_feat)}
        if test is not None:
            row["probe_auc"], row["probe_ap"] = linear_probe(old_reals, rep.x, test[0], test[1], fmap,
                                                             sub_rng(args.seed, "probe"), cfg.train)
        report.append(row)
    if args.cf_trace:
        rep = build_replay_set(memory, carriers, cfg.schedule, sub_rng(args.seed, "analyze/cf"), args.n_per_task)
        grid = uniform_frequencies(sub_rng(args.seed, "analyze/grid"), args.grid_size, fmap.out_dim, args.grid_scale)
        grid[0] = 0.0
        _write_text(Path(args.cf_trace), cf_trace_csv(cf_trace(rep.x, old_fakes, fmap, grid)))
    print(json.dumps({"banks": report}, indent=1, sort_keys=True))
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ddreplay", description="Discrepancy-map condensation and replay for continual fake detection.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    c = sub.add_parser("condense", help="condense one task into a memory file")
    c.add_argument("--config")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--task", type=int, default=0)
    c.add_argument("--out", required=True)
    c.add_argument("--append-to", help="existing memory to extend")
    c.add_argument("--trace", help="loss trace CSV")
    c.add_argument("--export-data", help="directory for the task's tensors")
    c.set_defaults(func=cmd_condense)

    r = sub.add_parser("replay", help="compose replay samples from a memory and real samples")
    r.add_argument("--config")
    r.add_argument("--memory", required=True)
    r.add_argument("--reals", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--manifest", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--n-per-task", type=int, default=1000)
    r.add_argument("--no-standardize", action="store_true")
    r.add_argument("--composition", choices=("vp", "additive"), default="vp")
    r.set_defaults(func=cmd_replay)

    k = sub.add_parser("continual", help="run the full continual pipeline per seed")
    k.add_argument("--config")
    k.add_argument("--out", help="output directory (overrides run.output_dir)")
    k.add_argument("--seed", type=int, action="append", help="override run.seeds; repeatable")
    k.set_defaults(func=cmd_continual)

    g = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--fixtures", type=int, default=10)
    g.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("analyze", help="feature-space scores and CF trace export")
    a.add_argument("--config")
    a.add_argument("--memory", required=True)
    a.add_argument("--carriers", required=True, help="real samples used as replay carriers")
    a.add_argument("--old-reals", required=True)
    a.add_argument("--old-fakes", required=True)
    a.add_argument("--test-reals")
    a.add_argument("--test-fakes")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--n-per-task", type=int, default=1000)
    a.add_argument("--cf-trace", help="CSV output for the CF trace")
    a.add_argument("--grid-size", type=int, default=32)
    a.add_argument("--grid-scale", type=float, default=1.0)
    a.set_defaults(func=cmd_analyze)
    return p


def _one_line(exc) -> str:
    return " ".join(str(exc).split()) or type(exc).__name__


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error[usage]: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        print("error[usage]: missing subcommand", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    kinds = [(ConfigError, "config"), (FormatError, "format"), (DivergenceError, "divergence"),
             (FloatingPointError, "divergence"), (OSError, "io"), (ValueError, "value")]
    try:
        return args.func(args)
    except tuple(k for k, _ in kinds) as exc:
        kind = next(name for cls, name in kinds if isinstance(exc, cls))
        print(f"error[{kind}]: {_one_line(exc)}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
