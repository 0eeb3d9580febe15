"""Command-line driver: ``fedtad partition | analyze | run``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from fedtad.data_io import DatasetBundle, SbmSpec, generate_sbm, load_dataset
from fedtad.errors import ConfigError, FedTadError
from fedtad.partition import partition_graph, simulate_node_variation
from fedtad.reliability import DEFAULT_WALK_LENGTH, class_homophily_all, knowledge_reliability
from fedtad.runtime import FedConfig, run_federation, write_metrics
from fedtad.server import DistillConfig

log = logging.getLogger("fedtad")

TOP_LEVEL_KEYS = ("dataset", "sbm", "out_dir", "federation", "distill")
SBM_FIELDS = tuple(f.name for f in dataclasses.fields(SbmSpec) if f.init)
FED_FIELDS = tuple(f.name for f in dataclasses.fields(FedConfig) if f.name != "distill")
DISTILL_FIELDS = tuple(f.name for f in dataclasses.fields(DistillConfig))


@dataclasses.dataclass
class ExperimentConfig:
    federation: FedConfig
    dataset: Path | None = None
    sbm: SbmSpec | None = None
    out_dir: Path = Path("runs/default")

    def load_bundle(self) -> DatasetBundle:
        if self.dataset is not None:
            return load_dataset(self.dataset)
        return generate_sbm(self.sbm)

    def to_dict(self) -> dict:
        sbm = None
        if self.sbm is not None:
            sbm = {name: getattr(self.sbm, name) for name in SBM_FIELDS}
            sbm["nodes_per_class"] = list(sbm["nodes_per_class"])
        fed = self.federation.to_dict()
        distill = fed.pop("distill")
        return {"dataset": None if self.dataset is None else str(self.dataset), "sbm": sbm,
                "out_dir": str(self.out_dir), "federation": fed, "distill": distill}


def _check_keys(section: str, payload, allowed) -> dict:
    if not isinstance(payload, dict):
        raise ConfigError(f"{section} must be a JSON object")
    for key in payload:
        if key not in allowed:
            where = f"{section}.{key}" if section != "config" else key
            raise ConfigError(f"unknown config key {where!r}")
    return payload


def parse_config(payload: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Strict parse: every key must be known, every value is validated."""
    _check_keys("config", payload, TOP_LEVEL_KEYS)
    base_dir = base_dir or Path.cwd()
    dataset = payload.get("dataset")
    sbm = payload.get("sbm")
    if (dataset is None) == (sbm is None):
        raise ConfigError("exactly one of 'dataset' and 'sbm' must be given")
    fed = dict(_check_keys("federation", payload.get("federation", {}), FED_FIELDS))
    distill = _check_keys("distill", payload.get("distill", {}), DISTILL_FIELDS)
    if "split_ratios" in fed:
        fed["split_ratios"] = tuple(fed["split_ratios"])
    try:
        cfg = FedConfig(**fed, distill=DistillConfig(**distill))
        spec = SbmSpec(**_check_keys("sbm", sbm, SBM_FIELDS)) if sbm is not None else None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    out_dir = Path(payload.get("out_dir", "runs/default"))
    return ExperimentConfig(cfg, None if dataset is None else base_dir / dataset, spec, out_dir)


def read_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: no such config file") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    return parse_config(payload, path.parent)


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def shard_summary(shard) -> dict:
    g = shard.graph
    return {
        "client": shard.client_id,
        "nodes": g.num_nodes,
        "edges": g.num_edges,
        "train": len(shard.train),
        "val": len(shard.val),
        "test": len(shard.test),
        "label_histogram": np.bincount(g.labels[g.labels >= 0], minlength=g.num_classes).tolist(),
    }


def _bundle_from_args(args) -> tuple[DatasetBundle, ExperimentConfig | None]:
    if args.config:
        exp = read_config(args.config)
        return exp.load_bundle(), exp
    if args.dataset:
        return load_dataset(args.dataset), None
    raise ConfigError("give either --dataset or --config")


def cmd_partition(args) -> int:
    bundle, exp = _bundle_from_args(args)
    K = args.clients or (exp.federation.num_clients if exp else 5)
    seed = args.seed if args.seed is not None else (exp.federation.seed if exp else 0)
    ratios = exp.federation.split_ratios if exp else (0.2, 0.4, 0.4)
    partition, shards = partition_graph(bundle.graph, K, seed, ratios)
    out = Path(args.out or (exp.out_dir if exp else "partition"))
    out.mkdir(parents=True, exist_ok=True)
    partition.to_json(out / "partition.json")
    summary = {"dataset": bundle.name, "num_nodes": bundle.graph.num_nodes, "K": K, "seed": seed,
               "shards": [shard_summary(s) for s in shards]}
    _write_json(out / "shards.json", summary)
    print(f"wrote {K} shards ({', '.join(str(s.num_nodes) for s in shards)} nodes) to {out}")
    return 0


def analyze_shards(shards, p: int) -> dict:
    clients = []
    for s in shards:
        hom = class_homophily_all(s.graph)
        clients.append({
            "client": s.client_id,
            "label_histogram": np.bincount(s.graph.labels[s.graph.labels >= 0],
                                           minlength=s.graph.num_classes).tolist(),
            "homophily": {str(c): h for c, h in enumerate(hom)},
            "reliability": {str(c): float(v) for c, v in enumerate(knowledge_reliability(s, p))},
        })
    return {"walk_length": p, "clients": clients}


def cmd_analyze(args) -> int:
    bundle, exp = _bundle_from_args(args)
    K = args.clients or (exp.federation.num_clients if exp else 5)
    seed = args.seed if args.seed is not None else (exp.federation.seed if exp else 0)
    p = args.walk_length or (exp.federation.walk_length if exp else DEFAULT_WALK_LENGTH)
    _, shards = partition_graph(bundle.graph, K, seed)
    if args.strip_edges:
        shards = simulate_node_variation(shards)
    report = {"dataset": bundle.name, "K": K, "seed": seed, **analyze_shards(shards, p)}
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def run_experiment(exp: ExperimentConfig) -> dict:
    cfg = exp.federation
    bundle = exp.load_bundle()
    partition, shards = partition_graph(bundle.graph, cfg.num_clients, cfg.seed, cfg.split_ratios)
    out = exp.out_dir
    out.mkdir(parents=True, exist_ok=True)
    partition.to_json(out / "partition.json")
    result = run_federation(shards, cfg)
    write_metrics(result.records, out / "metrics.csv")
    result.weights.save(out / "checkpoint.json")
    if result.server is not None:
        result.server.write_trace(out / "distill_trace.csv")
    summary = {
        "dataset": bundle.name,
        "final_accuracy": result.final_accuracy,
        "best_accuracy": result.best_accuracy,
        "rounds": len(result.records),
        "reliability": result.reliabilities.tolist(),
        "config": exp.to_dict(),
    }
    _write_json(out / "summary.json", summary)
    return summary


def cmd_run(args) -> int:
    exp = read_config(args.config)
    if args.seed is not None:
        exp.federation.seed = args.seed
    if args.workers is not None:
        exp.federation.workers = args.workers
    if args.out:
        exp.out_dir = Path(args.out)
    exp.federation.validate()
    summary = run_experiment(exp)
    print(f"final accuracy {summary['final_accuracy']:.4f}  best {summary['best_accuracy']:.4f}  -> {exp.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedtad", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    part = sub.add_parser("partition", help="Louvain-partition a dataset into client shards")
    part.add_argument("--dataset", type=Path)
    part.add_argument("--config", type=Path)
    part.add_argument("--clients", "-K", type=int)
    part.add_argument("--seed", type=int)
    part.add_argument("--out", type=Path)
    part.set_defaults(func=cmd_partition)

    ana = sub.add_parser("analyze", help="per-client label, homophily and reliability report")
    ana.add_argument("--dataset", type=Path)
    ana.add_argument("--config", type=Path)
    ana.add_argument("--clients", "-K", type=int)
    ana.add_argument("--seed", type=int)
    ana.add_argument("--walk-length", "-p", type=int)
    ana.add_argument("--strip-edges", action="store_true", help="drop every edge before the analysis")
    ana.add_argument("--out", type=Path, help="report path (stdout when omitted)")
    ana.set_defaults(func=cmd_analyze)

    run = sub.add_parser("run", help="run a federated experiment from a JSON config")
    run.add_argument("--config", type=Path, required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", type=Path)
    run.add_argument("--workers", type=int)
    run.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("FEDTAD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FedTadError, ValueError, OSError) as exc:
        print(f"fedtad {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
