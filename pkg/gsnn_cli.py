# -*- coding: utf-8 -*-
"""
gsnn_cli.py — Graph SNN • command-line front door
-------------------------------------------------
    python gsnn_cli.py train   --config configs/cora_gc.json [--out DIR] [--seed N] [--threads N] [--force]
    python gsnn_cli.py eval    --config CFG --checkpoint CKPT [--out DIR] [--force]
    python gsnn_cli.py profile --config CFG --checkpoint CKPT [CKPT ...] [--out DIR] [--force]
    python gsnn_cli.py sweep   --config CFG [--out DIR] [--threads N] [--force]

Exit codes: 0 ok, 1 unexpected failure, 2 bad config or missing path,
3 training diverged, 4 unreadable checkpoint or dimension mismatch,
5 output directory not empty (without --force).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from gsnn_config import (
    ConfigError,
    ExperimentConfig,
    OutputExistsError,
    load_dataset,
    load_experiment_config,
    prepare_out_dir,
    setup_logging,
    write_effective_config,
)
from gsnn_data import Dataset, DatasetError, encode
from gsnn_network import Checkpoint, CheckpointError, load_checkpoint, model_forward, save_checkpoint
from gsnn_neuron import ShapeError
from gsnn_profiler import build_efficiency_report, write_ratio_by_depth, write_report_csv, write_report_json
from gsnn_training import RunConfig, TrainingDivergedError, ensure_split, evaluate, run_seeds

logger = logging.getLogger("gsnn.cli")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_CHECKPOINT = 4
EXIT_OUTPUT_EXISTS = 5


def _write_json(path: Path, payload: Dict[str, Any]) -> Path:
    with path.open("w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    logger.info("Wrote %s", path)
    return path


def _start(args: argparse.Namespace) -> Tuple[ExperimentConfig, Path]:
    cfg = load_experiment_config(
        args.config,
        out_dir=args.out,
        threads=getattr(args, "threads", None),
        seed=getattr(args, "seed", None),
    )
    out = prepare_out_dir(cfg.out_dir, force=args.force)
    write_effective_config(cfg, out)
    return cfg, out


def _load_split_dataset(cfg: ExperimentConfig, run: RunConfig) -> Dataset:
    d = load_dataset(cfg)
    logger.info("Dataset %s", d.summary())
    return ensure_split(d, run)


def _checkpoint_run_config(ckpt: Checkpoint, path: str) -> RunConfig:
    try:
        return RunConfig.model_validate(ckpt.run_config)
    except ValueError as exc:
        raise CheckpointError(f"{path}: stored run config is invalid: {exc}") from exc


# =========================
#  1. Subcommands
# =========================

def cmd_train(args: argparse.Namespace) -> int:
    cfg, out = _start(args)
    d = _load_split_dataset(cfg, cfg.run)
    summary = run_seeds(d, cfg.run, workers=cfg.threads)

    for result in summary.results:
        seed_dir = out / f"seed{result.seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        result.history.to_csv(seed_dir / "history.csv", index=False)
        save_checkpoint(
            seed_dir / "checkpoint.npz",
            result.layers,
            cfg.run.model_dump(mode="json"),
            head=result.head,
            meta={"dataset": d.name, **result.to_dict()},
        )

    payload = {"dataset": d.name, "layer_kind": cfg.run.layer_kind, **summary.to_dict()}
    _write_json(out / "summary.json", payload)
    logger.info("Test accuracy %.4f ± %.4f", payload["test_acc_mean"], payload["test_acc_std"])
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg, out = _start(args)
    ckpt = load_checkpoint(args.checkpoint)
    run = _checkpoint_run_config(ckpt, args.checkpoint)
    d = _load_split_dataset(cfg, run)
    encoded = encode(d, run.time_window, run.encoding, run.encoding_seed)

    metrics = {
        name: evaluate(d, ckpt.layers, run, name, head=ckpt.head, encoded=encoded)
        for name in ("train", "val", "test")
    }
    payload = {"dataset": d.name, "checkpoint": str(Path(args.checkpoint).resolve()), "splits": metrics}
    _write_json(out / "metrics.json", payload)
    return EXIT_OK


def cmd_profile(args: argparse.Namespace) -> int:
    cfg, out = _start(args)
    d: Optional[Dataset] = None
    reports = []
    for n, ckpt_path in enumerate(args.checkpoint):
        ckpt = load_checkpoint(ckpt_path)
        run = _checkpoint_run_config(ckpt, ckpt_path)
        if d is None:
            d = _load_split_dataset(cfg, run)
        encoded = encode(d, run.time_window, run.encoding, run.encoding_seed)
        trace = model_forward(d.graph, encoded, ckpt.layers, training=False, head=ckpt.head)
        dims = [ckpt.layers[0].in_dim] + [spec.out_dim for spec in ckpt.layers]
        report = build_efficiency_report(
            trace,
            dims,
            num_nodes=d.num_nodes,
            graph_nnz=d.graph.nnz,
            T=run.time_window,
            accounting=cfg.profile_accounting,
            v_threshold=run.v_threshold,
        )
        stem = "opreport" if len(args.checkpoint) == 1 else f"opreport_{n}"
        write_report_json(report, out / f"{stem}.json")
        write_report_csv(report, out / f"{stem}.csv")
        reports.append(report)

    write_ratio_by_depth(reports, out / "ratio_by_depth.csv")
    return EXIT_OK


def _cell_name(n: int, cell: Dict[str, Any]) -> str:
    parts = [f"cell{n}"]
    if "time_window" in cell:
        parts.append(f"T{cell['time_window']}")
    if "use_stfn" in cell:
        parts.append("stfn" if cell["use_stfn"] else "nostfn")
    return "_".join(parts)


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg, out = _start(args)
    cells = cfg.sweep.cells()
    if not cells:
        raise ConfigError("sweep grid is empty; list time_windows and/or stfn values")
    d = _load_split_dataset(cfg, cfg.run)

    rows: List[Dict[str, Any]] = []
    for n, cell in enumerate(cells):
        try:
            run = RunConfig.model_validate({**cfg.run.model_dump(), **cell})
        except ValueError as exc:
            raise ConfigError(f"sweep cell {cell}: {exc}") from exc
        name = _cell_name(n, cell)
        cell_dir = out / name
        cell_dir.mkdir(parents=True, exist_ok=True)
        row: Dict[str, Any] = {
            "cell": name,
            "time_window": run.time_window,
            "use_stfn": run.use_stfn,
        }
        try:
            results = run_seeds(d, run, workers=cfg.threads)
        except TrainingDivergedError as exc:
            logger.warning("Sweep cell %s diverged: %s", name, exc)
            row.update({"status": "diverged", "test_acc_mean": None, "test_acc_std": None, "best_epoch_mean": None})
        else:
            for result in results.results:
                seed_dir = cell_dir / f"seed{result.seed}"
                seed_dir.mkdir(parents=True, exist_ok=True)
                result.history.to_csv(seed_dir / "history.csv", index=False)
            summary = results.to_dict()
            _write_json(cell_dir / "summary.json", {"cell": cell, **summary})
            row.update({
                "status": "ok",
                "test_acc_mean": summary["test_acc_mean"],
                "test_acc_std": summary["test_acc_std"],
                "best_epoch_mean": summary["best_epoch_mean"],
            })
        rows.append(row)

    pd.DataFrame(rows).to_csv(out / "sweep.csv", index=False)
    logger.info("Wrote %s", out / "sweep.csv")
    return EXIT_OK


# =========================
#  2. Parser and entry point
# =========================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gsnn", description="Graph spiking neural networks for node classification")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", default=None, help="output directory (overrides config and GSNN_OUT_DIR)")
        p.add_argument("--force", action="store_true", help="replace a non-empty output directory")
        p.add_argument("--verbose", action="store_true", help="debug logging")

    p_train = sub.add_parser("train", help="train over the configured seeds")
    common(p_train)
    p_train.add_argument("--seed", type=int, default=None, help="run this single seed")
    p_train.add_argument("--threads", type=int, default=None, help="worker processes for seeds")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="metrics of a checkpoint on all splits")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_prof = sub.add_parser("profile", help="operation counts and firing statistics")
    common(p_prof)
    p_prof.add_argument("--checkpoint", required=True, nargs="+")
    p_prof.set_defaults(func=cmd_profile)

    p_sweep = sub.add_parser("sweep", help="train every cell of the configured grid")
    common(p_sweep)
    p_sweep.add_argument("--threads", type=int, default=None, help="worker processes for seeds")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def _fail(code: int, exc: BaseException) -> int:
    print(f"gsnn: error: {exc}", file=sys.stderr)
    logger.error("%s", exc)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(verbose=args.verbose)
    try:
        return args.func(args)
    except (ConfigError, DatasetError) as exc:
        return _fail(EXIT_CONFIG, exc)
    except TrainingDivergedError as exc:
        return _fail(EXIT_DIVERGED, exc)
    except (CheckpointError, ShapeError) as exc:
        return _fail(EXIT_CHECKPOINT, exc)
    except OutputExistsError as exc:
        return _fail(EXIT_OUTPUT_EXISTS, exc)
    except Exception as exc:
        logger.exception("Unexpected failure")
        return _fail(EXIT_FAILURE, exc)


if __name__ == "__main__":
    sys.exit(main())
