"""Command-line entry point: config-driven, reproducible experiment runs.

Subcommands::

    fixclr generate-data      --config cfg.json --out data.mdds [--overwrite]
    fixclr train              --config cfg.json [--target N|all] [--method M]
                              [--seed N] [--out DIR] [--overwrite] [--resume]
    fixclr sweep              --config sweep.json [--target N|all] [--out DIR]
                              [--overwrite]
    fixclr export-embeddings  --checkpoint ckpt.json --dataset data.mdds
                              --out dump.csv [--threshold P]
    fixclr report             RUN_DIR [RUN_DIR ...] [--out report.csv]

Every run directory is self-describing: a resolved config copy, a metadata
sidecar with all seeds and package versions, the metrics/steps CSVs, and
per-epoch checkpoints; together they are enough to re-run the experiment
bit-compatibly.  Relative output paths are resolved under the
``FIXCLR_OUTPUT_ROOT`` environment variable when it is set.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
error, 5 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import ExperimentConfig, load_experiment_config
from .data import (MultiDomainDataset, leave_one_domain_out_splits,
                   load_dataset, save_dataset, synth_generate)
from .errors import ConfigurationError, DataError, NumericError
from .metrics import (STEPS_COLUMNS, RunSummary, append_epoch_row,
                      export_embeddings, read_metrics_csv, report,
                      write_steps_csv)
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .pseudo_label import ThresholdPolicy
from .trainer import REGULARIZERS, fit, momentum_vector

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_IO = 5


def _out_path(path_str: str) -> Path:
    path = Path(path_str)
    root = os.environ.get("FIXCLR_OUTPUT_ROOT")
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _load_dataset_for(cfg: ExperimentConfig) -> MultiDomainDataset:
    if cfg.dataset_synthetic is not None:
        return synth_generate(cfg.dataset_synthetic)
    return load_dataset(cfg.dataset_path)


def benchmark_tag(ds: MultiDomainDataset, n_labels: int, split_seed: int) -> str:
    """Stable fingerprint of (dataset provenance, split settings)."""
    doc = json.dumps({"provenance": ds.provenance, "n_labels": n_labels,
                      "split_seed": split_seed}, sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()[:12]


def _write_metadata(run_dir: Path, cfg: ExperimentConfig, target: int,
                    tag: str, model_cfg: ModelConfig) -> None:
    meta = {
        "config": cfg.raw,
        "method": cfg.method,
        "train_seed": cfg.train.seed,
        "split_seed": cfg.split_seed,
        "n_labels": cfg.n_labels,
        "target_domain": target,
        "benchmark": tag,
        "model": model_cfg.to_dict(),
        "versions": {
            "fixclr": __version__,
            "numpy": np.__version__,
            "torch": torch.__version__,
            "python": platform.python_version(),
        },
    }
    (run_dir / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def _model_config_for(cfg: ExperimentConfig, ds: MultiDomainDataset) -> ModelConfig:
    overrides = dict(cfg.model_overrides)
    overrides.setdefault("seed", cfg.train.seed)
    return ModelConfig(input_dim=ds.feature_dim, num_classes=ds.num_classes,
                       **overrides)


def _latest_checkpoint(ckpt_dir: Path) -> Path | None:
    if not ckpt_dir.is_dir():
        return None
    candidates = sorted(ckpt_dir.glob("epoch_*.json"))
    return candidates[-1] if candidates else None


def _run_split(ds: MultiDomainDataset, split, cfg: ExperimentConfig,
               run_dir: Path, overwrite: bool, resume: bool):
    """Train one split into its run directory; returns the final epoch row."""
    if run_dir.exists() and any(run_dir.iterdir()) and not (overwrite or resume):
        raise FileExistsError(f"{run_dir} already exists (use --overwrite or --resume)")
    ckpt_dir = run_dir / "checkpoints"
    if overwrite and run_dir.exists():
        for f in [run_dir / "metrics.csv", run_dir / "steps.csv"]:
            if f.exists():
                f.unlink()
        if ckpt_dir.exists():
            for f in ckpt_dir.glob("epoch_*.json"):
                f.unlink()
    run_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir.mkdir(exist_ok=True)

    model = None
    start_epoch = 0
    momentum = None
    if resume:
        latest = _latest_checkpoint(ckpt_dir)
        if latest is not None:
            model, doc = load_checkpoint(latest)
            start_epoch = int(doc["header"]["epoch"]) + 1
            if "momentum" in doc:
                momentum = np.array(doc["momentum"], dtype=np.float64)
            print(f"resuming {run_dir} from epoch {start_epoch}")

    model_cfg = _model_config_for(cfg, ds)
    tag = benchmark_tag(ds, cfg.n_labels, cfg.split_seed)
    (run_dir / "config.json").write_text(json.dumps(cfg.raw, indent=2, sort_keys=True))
    _write_metadata(run_dir, cfg, split.target_domain, tag, model_cfg)

    def on_epoch_end(epoch, model, trainer, metrics):
        row = metrics.epoch_rows[-1]
        append_epoch_row(run_dir / "metrics.csv", row)
        save_checkpoint(model, ckpt_dir / f"epoch_{epoch:04d}.json", epoch=epoch,
                        step=trainer.global_step, momentum=momentum_vector(trainer),
                        extra={"target_domain": split.target_domain})
        print(f"  epoch {epoch:3d}  target_acc={row.target_accuracy:.4f}  "
              f"keep={row.pl_keep_ratio:.3f}  probe={row.domain_probe_accuracy:.4f}")

    model, metrics = fit(ds, split, cfg.train, model_cfg, on_epoch_end,
                         model=model, start_epoch=start_epoch, momentum=momentum)
    if metrics.step_records:
        _append_steps(run_dir / "steps.csv", metrics)
    final_rows = read_metrics_csv(run_dir / "metrics.csv")
    if not final_rows:
        raise DataError(f"{run_dir}: no epochs were trained")
    return final_rows[-1], tag


def _append_steps(path: Path, metrics) -> None:
    if not path.exists():
        write_steps_csv(metrics, path)
        return
    with path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        for rec in metrics.step_records:
            writer.writerow([_csv_value(getattr(rec, c)) for c in STEPS_COLUMNS])


def _csv_value(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _select_targets(arg: str, num_domains: int) -> list[int]:
    if arg == "all":
        return list(range(num_domains))
    try:
        target = int(arg)
    except ValueError:
        raise ConfigurationError(f"--target must be an integer or 'all', got {arg!r}")
    if not 0 <= target < num_domains:
        raise ConfigurationError(f"--target {target} outside [0, {num_domains})")
    return [target]


def cmd_generate_data(args) -> int:
    cfg = load_experiment_config(args.config)
    if cfg.dataset_synthetic is None:
        raise ConfigurationError("generate-data needs a dataset.synthetic section")
    out = _out_path(args.out)
    if out.exists() and not args.overwrite:
        raise FileExistsError(f"{out} already exists (use --overwrite)")
    ds = synth_generate(cfg.dataset_synthetic)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    print(f"wrote {len(ds)} samples ({ds.num_domains} domains x "
          f"{ds.num_classes} classes, F={ds.feature_dim}) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_experiment_config(args.config)
    if args.method is not None:
        doc = dict(cfg.raw)
        method = dict(doc.get("method", {}))
        method["regularizer"] = args.method
        doc["method"] = method
        cfg = _reparse(doc)
    if args.seed is not None:
        doc = dict(cfg.raw)
        train = dict(doc["train"])
        train["seed"] = args.seed
        doc["train"] = train
        cfg = _reparse(doc)

    ds = _load_dataset_for(cfg)
    splits = leave_one_domain_out_splits(ds, cfg.n_labels, cfg.split_seed)
    targets = _select_targets(args.target, ds.num_domains)
    out_root = _out_path(args.out if args.out is not None else cfg.output_dir)

    finals = []
    for target in targets:
        run_dir = out_root / f"target_{target}"
        print(f"training method={cfg.method} seed={cfg.train.seed} target={target}")
        final, tag = _run_split(ds, splits[target], cfg, run_dir,
                                args.overwrite, args.resume)
        finals.append((target, final))

    summary = {
        "method": cfg.method,
        "seed": cfg.train.seed,
        "targets": [t for t, _ in finals],
        "target_accuracy_per_target": {str(t): f.target_accuracy for t, f in finals},
        "target_accuracy_mean": float(np.mean([f.target_accuracy for _, f in finals])),
    }
    (out_root / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(f"mean target accuracy over {len(finals)} run(s): "
          f"{summary['target_accuracy_mean']:.4f}")
    return EXIT_OK


def _reparse(doc: dict) -> ExperimentConfig:
    from .config import parse_experiment_config
    return parse_experiment_config(doc)


def cmd_sweep(args) -> int:
    try:
        sweep_doc = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{args.config}: invalid JSON ({e})") from e
    unknown = set(sweep_doc) - {"base", "methods", "seeds"}
    if unknown:
        raise ConfigurationError(f"unknown sweep key(s): {sorted(unknown)}")
    if "base" not in sweep_doc:
        raise ConfigurationError("sweep config needs a 'base' experiment config")
    methods = sweep_doc.get("methods", ["none", "fixclr"])
    seeds = sweep_doc.get("seeds", [0])
    for m in methods:
        if m not in REGULARIZERS:
            raise ConfigurationError(f"unknown regularizer {m!r} in sweep methods")

    base = _reparse(sweep_doc["base"])
    ds = _load_dataset_for(base)
    splits = leave_one_domain_out_splits(ds, base.n_labels, base.split_seed)
    targets = _select_targets(args.target, ds.num_domains)
    out_root = _out_path(args.out if args.out is not None else base.output_dir)

    summaries = []
    for method in methods:
        for seed in seeds:
            doc = dict(sweep_doc["base"])
            doc["method"] = dict(doc.get("method", {}), regularizer=method)
            doc["train"] = dict(doc["train"], seed=seed)
            cfg = _reparse(doc)
            run_root = out_root / f"{method}_seed{seed}"
            for target in targets:
                run_dir = run_root / f"target_{target}"
                print(f"sweep: method={method} seed={seed} target={target}")
                final, tag = _run_split(ds, splits[target], cfg, run_dir,
                                        args.overwrite, resume=False)
                summaries.append(RunSummary(method, seed, target, tag, final))

    table = report(summaries)
    table.write_csv(out_root / "report.csv")
    (out_root / "report.txt").write_text(table.to_text() + "\n")
    print(table.to_text())
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    threshold = None
    if args.threshold is not None:
        threshold = ThresholdPolicy("fixed", args.threshold)
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dump = export_embeddings(model, ds, out, threshold=threshold)
    print(f"wrote {len(dump.sample_ids)} embeddings ({dump.coords.shape[1]} dims) to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    summaries = []
    for run_dir in map(Path, args.run_dirs):
        meta_path = run_dir / "metadata.json"
        metrics_path = run_dir / "metrics.csv"
        if not meta_path.exists() or not metrics_path.exists():
            raise DataError(f"{run_dir} is not a run directory "
                            "(missing metadata.json or metrics.csv)")
        meta = json.loads(meta_path.read_text())
        rows = read_metrics_csv(metrics_path)
        if not rows:
            raise DataError(f"{run_dir}: metrics.csv has no epoch rows")
        summaries.append(RunSummary(meta["method"], meta["train_seed"],
                                    meta["target_domain"], meta["benchmark"],
                                    rows[-1]))
    table = report(summaries)
    if args.out:
        table.write_csv(_out_path(args.out))
    print(table.to_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fixclr",
                                     description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic dataset file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train one or all leave-one-domain-out splits")
    p.add_argument("--config", required=True)
    p.add_argument("--target", default="all",
                   help="target domain id, or 'all' (default)")
    p.add_argument("--method", choices=REGULARIZERS, default=None,
                   help="override the config's method.regularizer")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's train.seed")
    p.add_argument("--out", default=None, help="override the config's output_dir")
    p.add_argument("--overwrite", action="store_true")
    p.add_argument("--resume", action="store_true",
                   help="continue from the latest checkpoint in the run dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run a method x seed grid and report")
    p.add_argument("--config", required=True,
                   help="JSON with 'base' config plus 'methods' and 'seeds' lists")
    p.add_argument("--target", default="all")
    p.add_argument("--out", default=None)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-embeddings", help="dump projected coordinates to CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=None,
                   help="attach the model's kept pseudo-labels at this confidence")
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("report", help="aggregate run directories into a table")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", default=None, help="also write the table as CSV")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
