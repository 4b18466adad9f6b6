"""Evaluation: target accuracy, the domain-invariance probe, embedding
export, and per-run reports.

The domain probe is this package's quantitative stand-in for eyeballing
domain clusters in embedding plots: a cross-validated classifier predicts
the domain id from projected coordinates, so accuracy near chance (1/D)
means the representation carries little domain information.  The default
probe is a multinomial linear classifier with stratified 5-fold CV; a
nearest-domain-centroid probe is the cheap fallback.  On label-shuffled
dumps the probe must report chance, which the tests enforce so a broken
probe cannot fake invariance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import StratifiedKFold
from sklearn.neighbors import NearestCentroid

from .data import MultiDomainDataset
from .errors import ConfigurationError, DataError
from .pseudo_label import ThresholdPolicy, predict_pseudo_labels

METRICS_COLUMNS = ("epoch", "target_accuracy", "pl_quality", "pl_keep_ratio",
                   "domain_probe_accuracy", "mean_loss_s", "mean_loss_u",
                   "mean_loss_c", "epoch_seconds", "forward_pass_total")
STEPS_COLUMNS = ("step", "loss_s", "loss_u", "loss_c", "total_loss", "lr",
                 "keep_ratio", "forward_pass_count")
REPORT_METRICS = ("target_accuracy", "pl_quality", "pl_keep_ratio",
                  "domain_probe_accuracy", "epoch_seconds")


@dataclass(frozen=True)
class EpochRow:
    """One epoch of run metrics; rates are in [0, 1] (NaN = undefined)."""

    epoch: int
    target_accuracy: float
    pl_quality: float
    pl_keep_ratio: float
    domain_probe_accuracy: float
    mean_loss_s: float
    mean_loss_u: float
    mean_loss_c: float
    epoch_seconds: float
    forward_pass_total: int


@dataclass
class RunMetrics:
    """Per-epoch rows plus the per-step records of one training run."""

    epoch_rows: list[EpochRow] = field(default_factory=list)
    step_records: list = field(default_factory=list)

    @property
    def final(self) -> EpochRow:
        if not self.epoch_rows:
            raise DataError("run has no epoch rows")
        return self.epoch_rows[-1]


@dataclass
class EmbeddingDump:
    """Projected coordinates with ids; what external plotting tools consume."""

    sample_ids: np.ndarray
    domain_ids: np.ndarray
    class_ids: np.ndarray
    pseudo_labels: np.ndarray  # -1 where no pseudo-label was kept
    coords: np.ndarray


def target_accuracy(model, features: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of argmax-correct predictions on un-augmented samples."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if len(features) == 0:
        raise DataError("cannot evaluate accuracy on an empty sample set")
    with torch.no_grad():
        logits = model(features).logits.numpy()
    return float((logits.argmax(axis=1) == labels).mean())


def domain_probe_accuracy(coords, domain_ids=None, folds: int = 5,
                          kind: str = "linear", seed: int = 0) -> float:
    """Cross-validated accuracy of a domain classifier on embeddings.

    Accepts an :class:`EmbeddingDump` or a ``(coords, domain_ids)`` pair.
    Lower is more domain-invariant; chance is 1/D for balanced dumps.
    """
    if isinstance(coords, EmbeddingDump):
        domain_ids = coords.domain_ids
        coords = coords.coords
    coords = np.asarray(coords, dtype=np.float64)
    domain_ids = np.asarray(domain_ids)

    present = np.unique(domain_ids)
    if len(present) < 2:
        raise DataError("domain probe needs at least 2 domains present")
    if len(coords) < folds * len(present):
        raise DataError(
            f"domain probe needs at least folds*D = {folds * len(present)} rows, "
            f"got {len(coords)}"
        )
    if kind == "linear":
        clf = LogisticRegression(max_iter=1000)
    elif kind == "centroid":
        clf = NearestCentroid()
    else:
        raise ConfigurationError(f"unknown probe kind {kind!r}")

    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    accs = []
    for train_idx, test_idx in splitter.split(coords, domain_ids):
        clf.fit(coords[train_idx], domain_ids[train_idx])
        accs.append(float((clf.predict(coords[test_idx]) == domain_ids[test_idx]).mean()))
    return float(np.mean(accs))


def compute_embeddings(model, ds: MultiDomainDataset, rows=None,
                       threshold: ThresholdPolicy | None = None) -> EmbeddingDump:
    """Projected coordinates for (a subset of) a dataset.

    When a threshold policy is given, each row gets the model's own kept
    pseudo-label, -1 otherwise; without a policy every row gets -1.
    """
    rows = np.arange(len(ds)) if rows is None else np.asarray(rows)
    with torch.no_grad():
        out = model(ds.features[rows])
        coords = out.projected.numpy()
        if threshold is not None:
            pl = predict_pseudo_labels(out.logits.numpy(), threshold)
            pseudo = np.where(pl.keep_mask, pl.predicted_class, -1)
        else:
            pseudo = np.full(len(rows), -1, dtype=np.int64)
    return EmbeddingDump(ds.sample_ids[rows], ds.domain_ids[rows],
                         ds.class_ids[rows], pseudo, coords)


def save_embeddings(dump: EmbeddingDump, path) -> None:
    """Write a dump as CSV: ``sample_id,domain_id,class_id,pseudo_label,
    z_0,...,z_{P-1}`` with coordinates printed via ``repr`` so float64
    round-trips exactly.  Byte-identical for identical dumps."""
    p = dump.coords.shape[1]
    lines = [",".join(["sample_id", "domain_id", "class_id", "pseudo_label"]
                      + [f"z_{k}" for k in range(p)])]
    for i in range(len(dump.sample_ids)):
        row = [str(int(dump.sample_ids[i])), str(int(dump.domain_ids[i])),
               str(int(dump.class_ids[i])), str(int(dump.pseudo_labels[i]))]
        row.extend(repr(float(v)) for v in dump.coords[i])
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def export_embeddings(model, ds: MultiDomainDataset, path, rows=None,
                      threshold: ThresholdPolicy | None = None) -> EmbeddingDump:
    """Compute and save projected embeddings; returns the dump."""
    dump = compute_embeddings(model, ds, rows=rows, threshold=threshold)
    save_embeddings(dump, path)
    return dump


def load_embeddings(path) -> EmbeddingDump:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("sample_id,"):
        raise DataError(f"{path}: not an embedding dump")
    n_coords = len(lines[0].split(",")) - 4
    body = lines[1:]
    sample_ids = np.empty(len(body), dtype=np.int64)
    domain_ids = np.empty(len(body), dtype=np.int64)
    class_ids = np.empty(len(body), dtype=np.int64)
    pseudo = np.empty(len(body), dtype=np.int64)
    coords = np.empty((len(body), n_coords), dtype=np.float64)
    for i, line in enumerate(body):
        parts = line.split(",")
        if len(parts) != 4 + n_coords:
            raise DataError(f"{path}: row {i + 2} has {len(parts)} fields")
        sample_ids[i], domain_ids[i], class_ids[i], pseudo[i] = map(int, parts[:4])
        coords[i] = [float(v) for v in parts[4:]]
    return EmbeddingDump(sample_ids, domain_ids, class_ids, pseudo, coords)


# ---------------------------------------------------------------------------
# Metrics CSV files (fixed, documented column order)
# ---------------------------------------------------------------------------


def _format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def append_epoch_row(path, row: EpochRow) -> None:
    """Append one epoch row, writing the header on first use."""
    path = Path(path)
    new = not path.exists()
    with path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(METRICS_COLUMNS)
        writer.writerow([_format_value(getattr(row, c)) for c in METRICS_COLUMNS])


def write_metrics_csv(metrics: RunMetrics, path) -> None:
    path = Path(path)
    if path.exists():
        path.unlink()
    for row in metrics.epoch_rows:
        append_epoch_row(path, row)


def read_metrics_csv(path) -> list[EpochRow]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for rec in reader:
            rows.append(EpochRow(
                epoch=int(rec["epoch"]),
                target_accuracy=float(rec["target_accuracy"]),
                pl_quality=float(rec["pl_quality"]),
                pl_keep_ratio=float(rec["pl_keep_ratio"]),
                domain_probe_accuracy=float(rec["domain_probe_accuracy"]),
                mean_loss_s=float(rec["mean_loss_s"]),
                mean_loss_u=float(rec["mean_loss_u"]),
                mean_loss_c=float(rec["mean_loss_c"]),
                epoch_seconds=float(rec["epoch_seconds"]),
                forward_pass_total=int(rec["forward_pass_total"]),
            ))
    return rows


def write_steps_csv(metrics: RunMetrics, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STEPS_COLUMNS)
        for rec in metrics.step_records:
            writer.writerow([_format_value(getattr(rec, c)) for c in STEPS_COLUMNS])


# ---------------------------------------------------------------------------
# Cross-run comparison report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunSummary:
    """Final-epoch metrics of one run, tagged for aggregation."""

    method: str
    seed: int
    target_domain: int
    benchmark: str
    final_row: EpochRow


def summarize_run(method: str, seed: int, target_domain: int,
                  metrics: RunMetrics, benchmark: str = "") -> RunSummary:
    return RunSummary(method, seed, target_domain, benchmark, metrics.final)


@dataclass
class Report:
    """Mean and range (max - min) per method for each reported metric."""

    methods: list[str]
    rows: dict[str, dict[str, tuple[float, float]]]  # method -> metric -> (mean, range)
    num_runs: dict[str, int]

    def to_text(self) -> str:
        width = max([len(m) for m in self.methods] + [6])
        header = "method".ljust(width) + "  runs" + "".join(
            f"  {m:>26}" for m in REPORT_METRICS)
        lines = [header, "-" * len(header)]
        for method in self.methods:
            cells = []
            for metric in REPORT_METRICS:
                mean, rng = self.rows[method][metric]
                cells.append(f"  {mean:14.4f} ± {rng:<9.4f}")
            lines.append(method.ljust(width) + f"  {self.num_runs[method]:>4}"
                         + "".join(cells))
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "num_runs"]
                            + [f"{m}_{s}" for m in REPORT_METRICS
                               for s in ("mean", "range")])
            for method in self.methods:
                row = [method, self.num_runs[method]]
                for metric in REPORT_METRICS:
                    mean, rng = self.rows[method][metric]
                    row.extend([repr(mean), repr(rng)])
                writer.writerow(row)


def report(summaries: list[RunSummary]) -> Report:
    """Aggregate runs into a per-method mean ± range table.

    All runs must share the same benchmark tag; the mean of k identical
    runs equals any single run's value exactly (range 0).
    """
    if not summaries:
        raise ConfigurationError("report needs at least one run")
    benchmarks = {s.benchmark for s in summaries}
    if len(benchmarks) > 1:
        raise DataError(f"runs come from different benchmarks: {sorted(benchmarks)}")

    methods = sorted({s.method for s in summaries})
    rows: dict[str, dict[str, tuple[float, float]]] = {}
    num_runs: dict[str, int] = {}
    for method in methods:
        group = [s for s in summaries if s.method == method]
        num_runs[method] = len(group)
        rows[method] = {}
        for metric in REPORT_METRICS:
            values = [getattr(s.final_row, metric) for s in group]
            finite = [v for v in values if not math.isnan(v)]
            if not finite:
                rows[method][metric] = (math.nan, math.nan)
            else:
                rows[method][metric] = (float(np.mean(finite)),
                                        float(max(finite) - min(finite)))
    return Report(methods, rows, num_runs)
