"""
HSR Command Line
Subcommands: synth, cluster, icm, pbh, train, eval, ablate
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from dotenv import load_dotenv

from . import __version__
from .cluster import DbscanParams, dbscan, eps_heuristic
from .config import RunConfig, load_config
from .core import EmbeddingSet, PseudoLabels, pairwise_distances, pairwise_similarity
from .errors import HSRError, UsageError
from .evaluation import EvalResult, EvalSplit, evaluate
from .icm import build_rank_lists, mutual_pairs
from .metrics import write_metrics
from .model import ProjectorModel
from .observability import configure_logging
from .pbh import assess_or_none, refine_clusters
from .storage import (
    load_checkpoint, load_embeddings, load_split, save_checkpoint, save_embeddings,
    save_history, save_labels, save_pairs, save_split, write_csv, write_json_report,
)
from .synth import generate
from .trainer import HISTORY_COLUMNS, MIN_EPS, run_hsr

logger = logging.getLogger(__name__)

EMBEDDINGS_FILE = "embeddings.hsre"
METADATA_FILE = "metadata.csv"
SPLIT_FILE = "split.csv"
CHECKPOINT_FILE = "model.hsrm"

# name -> TrainConfig overrides, in report order
ABLATION_CONFIGS: List[Tuple[str, Dict[str, object]]] = [
    ("direct_transfer", {"iterations": 0}),
    ("baseline", {"use_icm": False, "use_pbh": False}),
    ("baseline_pbh", {"use_icm": False, "use_pbh": True}),
    ("baseline_icm", {"use_icm": True, "use_pbh": False}),
    ("hsr", {"use_icm": True, "use_pbh": True}),
]


class HSRArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> HSRArgumentParser:
    common = HSRArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="Flat key = value config file")
    common.add_argument("--seed", type=int, default=None, help="Override the config seed")
    common.add_argument("--out", type=Path, default=Path("."), help="Output directory")
    common.add_argument("--log-level", default=None, help="Log level (default HSR_LOG_LEVEL or INFO)")
    common.add_argument("--metrics-file", default=None, help="Write Prometheus text metrics here")

    parser = HSRArgumentParser(prog="hsr", description="Hard samples rectification for unsupervised re-ID")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=HSRArgumentParser)

    sub.add_parser("synth", parents=[common], help="Generate a synthetic camera-biased benchmark")

    for name, text in (
        ("cluster", "DBSCAN pseudo labels of the embedded dataset"),
        ("icm", "Inter-camera mutual pairs"),
        ("pbh", "Part-based splitting of imperfect clusters"),
        ("train", "Run the HSR training loop"),
        ("eval", "Rank-1 / mAP of a checkpoint"),
    ):
        cmd = sub.add_parser(name, parents=[common], help=text)
        cmd.add_argument("--data", type=Path, required=True,
                         help=f"Directory holding {EMBEDDINGS_FILE} and {METADATA_FILE}")
        cmd.add_argument("--checkpoint", type=Path, default=None, help="Projector checkpoint")

    ablate = sub.add_parser("ablate", parents=[common], help="Compare the five pipeline variants")
    ablate.add_argument("--seeds", type=int, default=5, help="Number of benchmark seeds")
    return parser


# ==================== Helpers ====================

def _load_dataset(data_dir: Path) -> EmbeddingSet:
    return load_embeddings(data_dir / EMBEDDINGS_FILE, data_dir / METADATA_FILE)


def _load_split(data_dir: Path, dataset: EmbeddingSet) -> Optional[EvalSplit]:
    path = data_dir / SPLIT_FILE
    if not path.exists() or not dataset.has_gt:
        return None
    return load_split(path, dataset)


def _model_for(args, config: RunConfig, dataset: EmbeddingSet) -> ProjectorModel:
    if args.checkpoint is not None:
        model, _ = load_checkpoint(args.checkpoint)
        return model
    return ProjectorModel.initialize(dataset.part_dim, config.D_out, seed=config.seed)


def _cluster(config: RunConfig, embeddings: np.ndarray, dist: np.ndarray) -> Tuple[PseudoLabels, float]:
    eps = config.eps
    if eps is None:
        eps = eps_heuristic(
            embeddings, config.min_pts, config.eps_percentile, distances=dist, rule=config.eps_rule,
        )
    eps = max(eps, MIN_EPS)
    return dbscan(embeddings, DbscanParams(eps=eps, min_pts=config.min_pts), distances=dist), eps


def _eval_line(result: EvalResult) -> str:
    return f"{result.r1!r},{result.map!r},{result.num_queries},{result.num_excluded}"


# ==================== Subcommands ====================

def cmd_synth(args, config: RunConfig) -> None:
    bench = generate(config.synth_config())
    save_embeddings(bench.dataset, args.out / EMBEDDINGS_FILE, args.out / METADATA_FILE)
    save_split(bench.split, args.out / SPLIT_FILE)
    write_csv(
        args.out / "twins.csv",
        ["id_a", "id_b", "shared_part"],
        [(a, b, part.value) for a, b, part in bench.twin_pairs],
    )
    print(f"{bench.dataset.num_samples},{bench.config.num_ids},{bench.config.cams},{len(bench.twin_pairs)}")


def cmd_cluster(args, config: RunConfig) -> None:
    dataset = _load_dataset(args.data)
    emb = _model_for(args, config, dataset).embed_global(dataset)
    labels, eps = _cluster(config, emb, pairwise_distances(emb))
    save_labels(args.out / "labels.csv", [("label", labels)])
    print(f"{labels.num_clusters},{labels.num_noise},{eps!r}")


def cmd_icm(args, config: RunConfig) -> None:
    dataset = _load_dataset(args.data)
    emb = _model_for(args, config, dataset).embed_global(dataset)
    rank = build_rank_lists(pairwise_similarity(emb), dataset.cameras, config.K)
    pairs = mutual_pairs(rank)
    save_pairs(args.out / "pairs.csv", pairs)
    print(f"{len(pairs)},{rank.mean_length()!r}")


def cmd_pbh(args, config: RunConfig) -> None:
    dataset = _load_dataset(args.data)
    model = _model_for(args, config, dataset)
    emb = model.embed_global(dataset)
    dist = pairwise_distances(emb)
    before, _ = _cluster(config, emb, dist)

    pbh_config = config.pbh_config()
    quality = assess_or_none(emb, before, pbh_config, distances=dist)
    parts = model.embed_parts(dataset)
    after, reports = refine_clusters(before, quality, (parts[0], parts[-1]), pbh_config, seed=config.seed)

    save_labels(args.out / "pbh_labels.csv", [("before", before), ("after", after)])
    write_json_report(args.out / "pbh_report.json", {
        "lambda": None if quality is None else quality.lambda_,
        "clusters_before": before.num_clusters,
        "clusters_after": after.num_clusters,
        "clusters": [r.to_dict() for r in reports],
    })
    print(f"{before.num_clusters},{after.num_clusters}")


def cmd_train(args, config: RunConfig) -> None:
    dataset = _load_dataset(args.data)
    split = _load_split(args.data, dataset)
    model = load_checkpoint(args.checkpoint)[0] if args.checkpoint is not None else None
    train_config = config.train_config()
    result = run_hsr(dataset, train_config, split=split, model=model)

    header = {"train_config": train_config.model_dump(mode="json")}
    save_checkpoint(result.model, args.out / CHECKPOINT_FILE, extra=header)
    save_history(args.out / "history.csv", result.history, HISTORY_COLUMNS)
    if result.final_labels is not None:
        save_labels(args.out / "labels.csv", [("label", result.final_labels)])
    write_json_report(args.out / "train_report.json", {
        "config": train_config.model_dump(mode="json"),
        "history": [r.to_dict() for r in result.history],
    })
    last = result.history[-1] if result.history else None
    if last is not None:
        print(f"{last.iteration},{last.num_clusters},{last.loss_total!r}")


def cmd_eval(args, config: RunConfig) -> None:
    if args.checkpoint is None:
        raise UsageError("eval requires --checkpoint")
    dataset = _load_dataset(args.data)
    split = _load_split(args.data, dataset)
    if split is None:
        raise UsageError(f"eval requires {SPLIT_FILE} and ground-truth ids in {args.data}")
    model, _ = load_checkpoint(args.checkpoint)
    result = evaluate(model.embed_global(dataset), split)
    print(_eval_line(result))


def cmd_ablate(args, config: RunConfig) -> None:
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    rows = []
    scores: Dict[str, List[Tuple[float, float]]] = {name: [] for name, _ in ABLATION_CONFIGS}
    for offset in range(args.seeds):
        seed = config.seed + offset
        bench = generate(config.synth_config(seed=seed))
        for name, overrides in ABLATION_CONFIGS:
            train_config = config.train_config(seed=seed, **overrides)
            result = run_hsr(bench.dataset, train_config, split=bench.split)
            final = evaluate(result.model.embed_global(bench.dataset), bench.split)
            rows.append((name, seed, final.r1, final.map))
            scores[name].append((final.r1, final.map))
            logger.info(
                f"Ablation {name} seed {seed}: r1={final.r1:.4f} map={final.map:.4f}",
                extra={"config": name, "seed": seed, "r1": final.r1, "map": final.map},
            )

    write_csv(args.out / "ablation.csv", ["config", "seed", "r1", "map"], rows)
    write_json_report(args.out / "ablation_summary.json", {
        name: {
            "mean_r1": float(np.mean([s[0] for s in values])),
            "mean_map": float(np.mean([s[1] for s in values])),
            "seeds": len(values),
        }
        for name, values in scores.items()
    })
    for name, values in scores.items():
        print(f"{name},{np.mean([s[0] for s in values])!r},{np.mean([s[1] for s in values])!r}")


COMMANDS: Dict[str, Callable] = {
    "synth": cmd_synth,
    "cluster": cmd_cluster,
    "icm": cmd_icm,
    "pbh": cmd_pbh,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand; 0 on success, 1 on user error, 2 on internal error"""
    load_dotenv()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1

    configure_logging(level=args.log_level)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = config.with_overrides(seed=args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, config)
        write_metrics(args.metrics_file or os.getenv("HSR_METRICS_FILE"))
    except (HSRError, FileNotFoundError) as e:
        logger.error(f"{args.command} failed: {e}", extra={"command": args.command})
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.exception(f"{args.command} crashed: {e}", extra={"command": args.command})
        return 2
    return 0


__all__ = [
    "ABLATION_CONFIGS",
    "build_parser",
    "main",
]
