"""Command-line benchmark driver.

Subcommands: ``gen-data``, ``ground-truth``, ``build``, ``tune``, ``run``,
``sweep``. Parameters resolve as defaults < ``--config`` file (flat
key=value lines) < explicit flags; flag names match the config field names.
Errors exit nonzero with the failing phase in the message.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .datasets import gen_synthetic, write_vectors
from .driver import (
    ExperimentConfig,
    apply_preset,
    build_index,
    load_or_gen_dataset,
    prepare,
    run_experiment,
    sweep,
    tune_efs,
)
from .report import report_to_text, sweep_to_csv, write_report
from .router import POLICIES
from .workload import ground_truth

logger = logging.getLogger(__name__)


class PhaseError(RuntimeError):
    def __init__(self, phase: str, cause: BaseException):
        super().__init__(f"[{phase}] {cause}")
        self.phase = phase


class _Phase:
    """Context manager tagging failures with the pipeline phase."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, PhaseError):
            raise PhaseError(self.name, exc) from exc
        return False


_INT_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)
               if f.type in ("int", "int | None")}
_FLOAT_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)
                 if f.type in ("float", "float | None")}
_BOOL_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)
                if f.type == "bool"}


def parse_config_file(path: str) -> dict:
    """Flat key=value lines; '#' starts a comment."""
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        values[key] = _coerce(key, val)
    return values


def _coerce(key: str, val: str):
    if val.lower() in ("none", ""):
        return None
    if key in _BOOL_FIELDS:
        return val.lower() in ("1", "true", "yes", "on")
    if key in _INT_FIELDS:
        return int(val)
    if key in _FLOAT_FIELDS:
        return float(val)
    return val


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--preset", choices=["desk"], help="named parameter preset")
    p.add_argument("--dataset", help="base vectors (.fvecs/.bvecs)")
    p.add_argument("--queries", help="query pool file")
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--distribution", choices=["uniform", "gauss-mix"])
    p.add_argument("--metric", choices=["l2", "ip"])
    p.add_argument("--m", type=int)
    p.add_argument("--ef-construction", type=int)
    p.add_argument("--ef-search", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--index-path", help="directory for the persisted index")
    p.add_argument("--cns", type=int)
    p.add_argument("--mns", type=int)
    p.add_argument("--cache-ratio", type=float)
    p.add_argument("--cooling-fraction", type=float)
    p.add_argument("--admission-prob", type=float)
    p.add_argument("--no-cache", action="store_true", help="disable node caches")
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--batch-b", type=int)
    p.add_argument("--sync-t", type=int)
    p.add_argument("--query-pool", type=int)
    p.add_argument("--warmup-queries", type=int)
    p.add_argument("--measured-queries", type=int)
    p.add_argument("--zipf-s", type=float,
                   help="Zipf exponent; 0 means uniform")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=["deterministic", "concurrent"])
    p.add_argument("--workers-per-cn", type=int)
    p.add_argument("--clients-per-cn", type=int)
    p.add_argument("--no-unified-replay", action="store_true",
                   help="skip the CHR_max replay (no CSP in the report)")
    p.add_argument("--recall-sample", type=int)


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    with _Phase("config"):
        values: dict = {}
        if args.config:
            values.update(parse_config_file(args.config))
        field_names = {f.name for f in dataclasses.fields(ExperimentConfig)}
        for key, val in vars(args).items():
            if key in field_names and val is not None:
                values[key] = val
        if getattr(args, "no_cache", False):
            values["cache_enabled"] = False
        if getattr(args, "no_unified_replay", False):
            values["unified_replay"] = False
        if values.get("zipf_s") is not None and values["zipf_s"] <= 0:
            values["zipf_s"] = None
        unknown = set(values) - field_names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = ExperimentConfig(**values)
        if args.preset:
            explicit = {k for k in vars(args)
                        if k in field_names and vars(args)[k] is not None}
            cfg = apply_preset(cfg, args.preset)
            # flags given explicitly win over the preset
            keep = {k: values[k] for k in explicit if k in values}
            if keep:
                cfg = cfg.with_overrides(**keep)
        return cfg


def _write_outputs(args, report: dict) -> None:
    with _Phase("report"):
        if getattr(args, "report", None):
            write_report(report, args.report)
            print(f"report written to {args.report}")
        if getattr(args, "csv", None):
            Path(args.csv).write_text(sweep_to_csv(report))
            print(f"csv written to {args.csv}")
        sys.stdout.write(report_to_text(report))


def cmd_gen_data(args) -> int:
    with _Phase("dataset"):
        data = gen_synthetic(args.n, args.d, args.distribution or "gauss-mix",
                             args.seed or 0)
        write_vectors(args.out, data)
        print(f"wrote {len(data)} x {args.d} vectors to {args.out}")
    return 0


def cmd_ground_truth(args) -> int:
    with _Phase("dataset"):
        from .datasets import read_vectors
        dataset = read_vectors(args.dataset)
        queries = read_vectors(args.queries)
    with _Phase("ground-truth"):
        truth = ground_truth(dataset, queries, args.k, args.metric or "l2")
        write_vectors(args.out, truth)
        print(f"wrote {len(truth)} x {args.k} ground-truth ids to {args.out}")
    return 0


def cmd_build(args) -> int:
    cfg = build_config(args)
    with _Phase("dataset"):
        dataset = load_or_gen_dataset(cfg)
        cfg = cfg.with_overrides(n=len(dataset), d=dataset.shape[1])
    with _Phase("build"):
        index = build_index(cfg, dataset)
        out = args.out or cfg.index_path
        if not out:
            raise ValueError("--out (or index_path) required to persist the build")
        index.save(out)
        print(f"index with {index.meta.node_count} nodes saved to {out}")
    return 0


def cmd_tune(args) -> int:
    cfg = build_config(args)
    with _Phase("prepare"):
        ctx = prepare(cfg)
    with _Phase("tune"):
        result = tune_efs(cfg, args.target_recall, ctx)
    if getattr(args, "report", None):
        with _Phase("report"):
            write_report({"schema_version": 1, "tune": result,
                          "config": dataclasses.asdict(cfg)}, args.report)
    status = "reached" if result["reached"] else "NOT reached"
    print(f"ef_search={result['ef_search']} recall={result['recall']:.4f} "
          f"(target {args.target_recall} {status})")
    return 0 if result["reached"] else 1


def cmd_run(args) -> int:
    cfg = build_config(args)
    with _Phase("prepare"):
        ctx = prepare(cfg)
    with _Phase("run"):
        report = run_experiment(cfg, ctx)
    _write_outputs(args, report)
    return 0


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    policies = tuple(args.policies.split(",")) if args.policies else POLICIES
    bad = [p for p in policies if p not in POLICIES]
    if bad:
        raise PhaseError("config", ValueError(f"unknown policies {bad}"))
    with _Phase("prepare"):
        ctx = prepare(cfg)
    with _Phase("run"):
        report = sweep(cfg, policies, ctx)
    _write_outputs(args, report)
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="disagg-hnsw",
        description="benchmark driver for the disaggregated HNSW index")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic vector file")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--distribution", choices=["uniform", "gauss-mix"])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("ground-truth", help="brute-force exact neighbors")
    p.add_argument("--dataset", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--metric", choices=["l2", "ip"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ground_truth)

    p = sub.add_parser("build", help="build and persist an index")
    _add_config_flags(p)
    p.add_argument("--out", help="output directory (defaults to index_path)")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("tune", help="find ef_search for a target recall")
    _add_config_flags(p)
    p.add_argument("--target-recall", type=float, default=0.95)
    p.add_argument("--report")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("run", help="single benchmark run")
    _add_config_flags(p)
    p.add_argument("--report")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="all routing policies over one stream")
    _add_config_flags(p)
    p.add_argument("--policies", help="comma list, default all four")
    p.add_argument("--report")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PhaseError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error [cli] {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
