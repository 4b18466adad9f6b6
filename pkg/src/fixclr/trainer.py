"""Semi-supervised training loop: supervised CE + masked consistency CE +
optional contrastive regularizer, under SGD with a cosine-annealed rate.

Each step runs exactly three forward passes: labeled weak views (supervised
cross-entropy), unlabeled weak views (pseudo-labels, no gradient), and
unlabeled strong views (masked cross-entropy against the kept
pseudo-labels).  The regularizer reuses the projections of the labeled weak
pass (ground-truth classes) and the unlabeled strong pass (kept pseudo
classes), so enabling it never adds a forward pass.

Randomness: the run seed feeds numpy PCG64 streams; batch sampling and
augmentation use per-epoch streams seeded as ``[seed, epoch, k]`` so a run
resumed at epoch e replays the same batches the uninterrupted run would
have seen.  Identical seeds give identical final parameters.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F

from .augment import AugmentationPolicy, strong_augment, weak_augment
from .data import MultiDomainDataset, SplitSpec, mixed_domain_batch
from .errors import ConfigurationError, NumericError
from .losses import FixCLRConfig, RepresentationBatch, loss_for_variant
from .metrics import EpochRow, RunMetrics, domain_probe_accuracy, target_accuracy
from .model import EncoderModel, ModelConfig
from .pseudo_label import (PseudoLabelBatch, ThresholdPolicy, keep_ratio,
                           predict_pseudo_labels, pseudo_label_quality)

REGULARIZERS = ("none", "fixclr", "fixclr_with_positives")


@dataclass(frozen=True)
class TrainConfig:
    """Everything the optimization loop needs besides the data."""

    epochs: int = 20
    steps_per_epoch: int | None = None  # default: ceil(|unlabeled| / (mu * batch_size))
    base_lr: float = 0.003
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 48
    mu: int = 1
    threshold: ThresholdPolicy = field(default_factory=ThresholdPolicy)
    fixclr: FixCLRConfig = field(default_factory=FixCLRConfig)
    regularizer: str = "none"
    seed: int = 0
    augment: AugmentationPolicy = field(
        default_factory=lambda: AugmentationPolicy("weak"))
    regularizer_view: str = "strong"  # which unlabeled view feeds the regularizer
    ema: bool = False  # reserved, not implemented
    probe_max_samples: int = 2048
    probe_folds: int = 5
    probe_kind: str = "linear"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.base_lr <= 0:
            raise ConfigurationError("base_lr must be > 0")
        if self.regularizer not in REGULARIZERS:
            raise ConfigurationError(f"unknown regularizer {self.regularizer!r}")
        if self.regularizer_view not in ("weak", "strong"):
            raise ConfigurationError("regularizer_view must be 'weak' or 'strong'")
        if self.ema:
            raise ConfigurationError("EMA evaluation is a reserved flag, not implemented")

    def effective_fixclr(self) -> FixCLRConfig:
        """FixCLR config with the variant implied by the regularizer choice."""
        variant = ("with_positives" if self.regularizer == "fixclr_with_positives"
                   else "repel_only")
        return replace(self.fixclr, variant=variant)


@dataclass(frozen=True)
class StepRecord:
    """Losses and bookkeeping for one optimization step."""

    step: int
    loss_s: float
    loss_u: float
    loss_c: float
    total_loss: float
    lr: float
    keep_ratio: float
    forward_pass_count: int


@dataclass(frozen=True)
class LabeledBatch:
    features: np.ndarray
    class_ids: np.ndarray
    domain_ids: np.ndarray


@dataclass(frozen=True)
class UnlabeledBatch:
    features: np.ndarray
    domain_ids: np.ndarray


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Cosine-annealed learning rate: base_lr at step 0, zero at the end."""
    if total_steps < 1:
        raise ConfigurationError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ConfigurationError(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


class Trainer:
    """Owns the model, optimizer, and step counter for one run."""

    def __init__(self, model: EncoderModel, cfg: TrainConfig, total_steps: int):
        self.model = model
        self.cfg = cfg
        self.total_steps = total_steps
        self.global_step = 0
        self.optimizer = torch.optim.SGD(model.parameters(), lr=cfg.base_lr,
                                         momentum=cfg.momentum,
                                         weight_decay=cfg.weight_decay)
        self.weak_policy = cfg.augment.as_kind("weak")
        self.strong_policy = cfg.augment.as_kind("strong")

    def train_step(self, labeled: LabeledBatch, unlabeled: UnlabeledBatch,
                   rng: np.random.Generator) -> StepRecord:
        """One SGD update on L_S + L_U + weight * L_C at the scheduled rate."""
        cfg = self.cfg
        model = self.model
        lr = cosine_lr(self.global_step, self.total_steps, cfg.base_lr)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        passes_before = model.forward_passes

        # (a) supervised loss on weak labeled views
        weak_lab = weak_augment(labeled.features, self.weak_policy, rng)
        out_lab = model(weak_lab)
        targets_lab = torch.from_numpy(np.asarray(labeled.class_ids, dtype=np.int64))
        loss_s = F.cross_entropy(out_lab.logits, targets_lab)

        # (b) pseudo-labels from weak unlabeled views; gradient only flows
        # through the weak pass when it feeds the regularizer
        weak_unl = weak_augment(unlabeled.features, self.weak_policy, rng)
        weak_needs_grad = (cfg.regularizer != "none"
                           and cfg.regularizer_view == "weak")
        if weak_needs_grad:
            out_unl_weak = model(weak_unl)
            weak_logits = out_unl_weak.logits.detach().numpy()
        else:
            with torch.no_grad():
                out_unl_weak = model(weak_unl)
            weak_logits = out_unl_weak.logits.numpy()
        pl = predict_pseudo_labels(weak_logits, cfg.threshold, step=self.global_step)

        # (c) masked consistency loss on strong unlabeled views
        strong_unl = strong_augment(unlabeled.features, self.strong_policy, rng)
        out_unl_strong = model(strong_unl)
        loss_u = self._masked_consistency(out_unl_strong.logits, pl)

        # (d) contrastive regularizer on projections already computed above
        loss_c, skipped = self._regularizer(out_lab, out_unl_weak, out_unl_strong,
                                            labeled, unlabeled, pl)

        total = loss_s + loss_u + loss_c
        if not torch.isfinite(total):
            raise NumericError(
                "non-finite loss at step "
                f"{self.global_step}: L_S={float(loss_s):g} L_U={float(loss_u):g} "
                f"L_C={float(loss_c):g} lr={lr:g}"
            )

        self.optimizer.zero_grad()
        total.backward()
        self.optimizer.step()
        self.global_step += 1

        return StepRecord(
            step=self.global_step - 1,
            loss_s=float(loss_s.detach()),
            loss_u=float(loss_u.detach()),
            loss_c=float(loss_c.detach()),
            total_loss=float(total.detach()),
            lr=lr,
            keep_ratio=keep_ratio(pl),
            forward_pass_count=model.forward_passes - passes_before,
        )

    def _masked_consistency(self, strong_logits: torch.Tensor,
                            pl: PseudoLabelBatch) -> torch.Tensor:
        """Mean CE over kept samples against their pseudo-labels; exact zero
        (no gradient) when nothing is kept."""
        if pl.num_kept == 0:
            return torch.zeros((), dtype=torch.float64)
        kept = torch.from_numpy(pl.keep_mask)
        targets = torch.from_numpy(pl.predicted_class[pl.keep_mask].astype(np.int64))
        ce = F.cross_entropy(strong_logits[kept], targets, reduction="none")
        if pl.weights is None:
            return ce.mean()
        w = torch.from_numpy(pl.weights[pl.keep_mask])
        return (ce * w).sum() / w.sum().clamp_min(1e-12)

    def _regularizer(self, out_lab, out_unl_weak, out_unl_strong,
                     labeled: LabeledBatch, unlabeled: UnlabeledBatch,
                     pl: PseudoLabelBatch):
        cfg = self.cfg
        if cfg.regularizer == "none":
            return torch.zeros((), dtype=torch.float64), True
        unl_proj = (out_unl_weak.projected if cfg.regularizer_view == "weak"
                    else out_unl_strong.projected)
        batch = RepresentationBatch(
            torch.cat([out_lab.projected, unl_proj]),
            np.concatenate([labeled.domain_ids, unlabeled.domain_ids]),
            np.concatenate([labeled.class_ids, pl.predicted_class]),
            np.concatenate([np.ones(len(labeled.class_ids), dtype=bool), pl.keep_mask]),
        )
        fixclr_cfg = cfg.effective_fixclr()
        result = loss_for_variant(batch, fixclr_cfg)
        return fixclr_cfg.loss_weight * result.value, result.skipped


def default_steps_per_epoch(split: SplitSpec, cfg: TrainConfig) -> int:
    return max(1, math.ceil(len(split.unlabeled_ids) / (cfg.mu * cfg.batch_size)))


def _batch_views(ds: MultiDomainDataset, labeled_ids, unlabeled_ids):
    lab_rows = ds.rows_for_ids(labeled_ids)
    unl_rows = ds.rows_for_ids(unlabeled_ids)
    labeled = LabeledBatch(ds.features[lab_rows], ds.class_ids[lab_rows],
                           ds.domain_ids[lab_rows])
    unlabeled = UnlabeledBatch(ds.features[unl_rows], ds.domain_ids[unl_rows])
    return labeled, unlabeled


def _probe_rows(ds: MultiDomainDataset, split: SplitSpec, cfg: TrainConfig) -> np.ndarray:
    """Fixed evaluation probe: unlabeled source rows, capped with a seeded
    subsample so large datasets stay cheap to evaluate."""
    rows = ds.rows_for_ids(split.unlabeled_ids_sorted())
    if len(rows) > cfg.probe_max_samples:
        rng = np.random.default_rng([cfg.seed, 97])
        rows = np.sort(rng.choice(rows, size=cfg.probe_max_samples, replace=False))
    return rows


def momentum_vector(trainer: Trainer) -> np.ndarray | None:
    """SGD momentum buffers flattened in parameter order, if any exist."""
    bufs = []
    for _, p in trainer.model.named_parameters():
        state = trainer.optimizer.state.get(p)
        if not state or "momentum_buffer" not in state:
            return None
        bufs.append(state["momentum_buffer"].detach().numpy().ravel())
    return np.concatenate(bufs)


def load_momentum(trainer: Trainer, flat: np.ndarray) -> None:
    flat = np.asarray(flat, dtype=np.float64)
    offset = 0
    for _, p in trainer.model.named_parameters():
        n = p.numel()
        buf = torch.from_numpy(flat[offset:offset + n].reshape(p.shape).copy())
        trainer.optimizer.state[p]["momentum_buffer"] = buf
        offset += n


def fit(ds: MultiDomainDataset, split: SplitSpec, cfg: TrainConfig,
        model_cfg: ModelConfig | None = None, on_epoch_end=None,
        model: EncoderModel | None = None, start_epoch: int = 0,
        momentum: np.ndarray | None = None):
    """Run the full training loop for one split.

    Returns ``(model, RunMetrics)``.  Per epoch, the metrics record
    target-domain accuracy, pseudo-label quality and keep ratio on a fixed
    probe of unlabeled source data, the domain-probe accuracy of the probe
    projections, mean losses, wall time of the training loop (evaluation
    excluded), and the number of training forward passes.  Evaluation runs
    without gradients and never influences training: target-domain samples
    are only ever read by the evaluation pass.

    ``model``/``start_epoch``/``momentum`` support resuming from a
    checkpoint; the learning-rate schedule continues from the global step
    implied by ``start_epoch`` over the originally planned total steps.
    """
    if model_cfg is None:
        model_cfg = ModelConfig(input_dim=ds.feature_dim, num_classes=ds.num_classes,
                                seed=cfg.seed)
    if model is None:
        model = EncoderModel(model_cfg)

    steps_per_epoch = cfg.steps_per_epoch or default_steps_per_epoch(split, cfg)
    total_steps = cfg.epochs * steps_per_epoch
    trainer = Trainer(model, cfg, total_steps)
    trainer.global_step = start_epoch * steps_per_epoch
    if momentum is not None:
        load_momentum(trainer, momentum)

    target_rows = ds.domain_rows(split.target_domain)
    probe_rows = _probe_rows(ds, split, cfg)
    metrics = RunMetrics()

    for epoch in range(start_epoch, cfg.epochs):
        batch_rng = np.random.default_rng([cfg.seed, epoch, 0])
        aug_rng = np.random.default_rng([cfg.seed, epoch, 1])

        epoch_records: list[StepRecord] = []
        t0 = time.perf_counter()
        for _ in range(steps_per_epoch):
            lab_ids, unl_ids = mixed_domain_batch(split, ds, cfg.batch_size,
                                                  cfg.mu, batch_rng)
            labeled, unlabeled = _batch_views(ds, lab_ids, unl_ids)
            epoch_records.append(trainer.train_step(labeled, unlabeled, aug_rng))
        epoch_seconds = time.perf_counter() - t0

        row = _evaluate_epoch(model, ds, split, cfg, trainer, epoch,
                              epoch_records, epoch_seconds, target_rows, probe_rows)
        metrics.step_records.extend(epoch_records)
        metrics.epoch_rows.append(row)
        if on_epoch_end is not None:
            on_epoch_end(epoch, model, trainer, metrics)
    return model, metrics


def _evaluate_epoch(model, ds, split, cfg, trainer, epoch, records,
                    epoch_seconds, target_rows, probe_rows) -> EpochRow:
    model.eval()
    with torch.no_grad():
        tgt_acc = target_accuracy(model, ds.features[target_rows],
                                  ds.class_ids[target_rows])
        probe_out = model(ds.features[probe_rows])
        pl = predict_pseudo_labels(probe_out.logits.numpy(), cfg.threshold,
                                   step=trainer.global_step)
        quality = pseudo_label_quality(pl, ds.class_ids[probe_rows])
        probe_acc = domain_probe_accuracy(probe_out.projected.numpy(),
                                          ds.domain_ids[probe_rows],
                                          folds=cfg.probe_folds,
                                          kind=cfg.probe_kind, seed=cfg.seed)
    model.train()
    return EpochRow(
        epoch=epoch,
        target_accuracy=tgt_acc,
        pl_quality=math.nan if quality is None else quality,
        pl_keep_ratio=keep_ratio(pl),
        domain_probe_accuracy=probe_acc,
        mean_loss_s=float(np.mean([r.loss_s for r in records])),
        mean_loss_u=float(np.mean([r.loss_u for r in records])),
        mean_loss_c=float(np.mean([r.loss_c for r in records])),
        epoch_seconds=epoch_seconds,
        forward_pass_total=int(sum(r.forward_pass_count for r in records)),
    )
