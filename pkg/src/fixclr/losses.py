"""Repel-only contrastive regularizer over pseudo-label class groups.

The regularizer groups eligible representations by class (any domain) and,
per domain, by "everything except class j".  For each source domain i it
adds

    log( sum_j exp(sim(DOM_minus[i][j], CLS_j) / tau) ) - 1/tau

which equals ``-log( exp(1/tau) / sum_j exp(sim/tau) )``: a contrastive
term with the numerator pinned to the constant exp(1/tau), i.e. no positive
attraction, only repulsion of each domain's non-class-j group away from the
global class-j group.  The ablation variant restores an attraction term
built from per-domain same-class groups.

Group similarity defaults to the cosine of normalized group centroids; a
mean-pairwise-cosine mode is available for ablations (for unit vectors that
is the dot product of the unnormalized group means).  Everything is torch
float64 with max-shifted log-sum-exp, so gradients flow to the input
vectors.  ``fixclr_oracle`` recomputes either variant with explicit scalar
loops and serves as the independent ground truth in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigurationError, NumericError

DEGENERATE_NORM = 1e-12

VARIANT_REPEL = "repel_only"
VARIANT_POSITIVES = "with_positives"


@dataclass(frozen=True)
class FixCLRConfig:
    """Hyperparameters of the contrastive regularizer."""

    temperature: float = 0.5
    loss_weight: float = 1.0
    variant: str = VARIANT_REPEL
    similarity_mode: str = "centroid"  # or "mean_pairwise"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be > 0")
        if self.loss_weight < 0:
            raise ConfigurationError("loss_weight must be >= 0")
        if self.variant not in (VARIANT_REPEL, VARIANT_POSITIVES):
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.similarity_mode not in ("centroid", "mean_pairwise"):
            raise ConfigurationError(f"unknown similarity_mode {self.similarity_mode!r}")


class RepresentationBatch:
    """Unit vectors plus the metadata that defines the loss groups.

    ``eligibility`` marks which rows participate: the trainer sets it true
    for labeled samples (ground-truth class) and for unlabeled samples whose
    pseudo-label survived the confidence threshold (pseudo class).
    Ineligible rows are excluded from every group statistic.
    """

    def __init__(self, vectors, domain_ids, class_ids, eligibility=None):
        if isinstance(vectors, torch.Tensor):
            self.vectors = vectors.to(torch.float64) \
                if vectors.dtype != torch.float64 else vectors
        else:
            self.vectors = torch.as_tensor(np.asarray(vectors, dtype=np.float64))
        if self.vectors.ndim != 2:
            raise ConfigurationError("vectors must be a 2-d (n, P) array")
        n = self.vectors.shape[0]
        self.domain_ids = np.asarray(domain_ids, dtype=np.int64)
        self.class_ids = np.asarray(class_ids, dtype=np.int64)
        self.eligibility = (np.ones(n, dtype=bool) if eligibility is None
                            else np.asarray(eligibility, dtype=bool))
        if not (len(self.domain_ids) == len(self.class_ids) == len(self.eligibility) == n):
            raise ConfigurationError("metadata arrays must match the number of vectors")
        if n and (self.domain_ids.min() < 0 or self.class_ids.min() < 0):
            raise ConfigurationError("domain and class ids must be non-negative")

        elig = self.eligibility
        if elig.any():
            norms = torch.linalg.vector_norm(
                self.vectors.detach()[torch.from_numpy(np.flatnonzero(elig))], dim=1)
            if (norms - 1.0).abs().max().item() > 1e-6:
                raise ConfigurationError(
                    "eligible representation vectors must be unit-normalized (within 1e-6)"
                )

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def num_eligible_classes(self) -> int:
        return len(np.unique(self.class_ids[self.eligibility]))


@dataclass
class GroupCentroids:
    """Normalized group centroids; absent groups are simply missing keys."""

    cls_centroids: dict[int, torch.Tensor]
    dom_minus: dict[tuple[int, int], torch.Tensor]
    dom_same: dict[tuple[int, int], torch.Tensor]


@dataclass
class LossResult:
    """Scalar loss plus whether the batch was skipped as degenerate."""

    value: torch.Tensor
    skipped: bool

    def item(self) -> float:
        return float(self.value.detach())


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ConfigurationError("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _group_sums(batch: RepresentationBatch):
    """Per-(domain, class) sums and counts over eligible rows.

    Returns ``(sums, counts, domains, classes)`` where ``sums`` has shape
    (D, C, P) over the present id ranges.  Differentiable w.r.t. the batch
    vectors.
    """
    elig = np.flatnonzero(batch.eligibility)
    dom = batch.domain_ids[elig]
    cls = batch.class_ids[elig]
    d_max = int(dom.max()) + 1
    c_max = int(cls.max()) + 1
    p = batch.vectors.shape[1]

    flat_idx = torch.from_numpy(dom * c_max + cls)
    sums = torch.zeros(d_max * c_max, p, dtype=torch.float64)
    sums = sums.index_add(0, flat_idx, batch.vectors[torch.from_numpy(elig)])
    counts = np.bincount(dom * c_max + cls, minlength=d_max * c_max)
    return (sums.view(d_max, c_max, p),
            counts.reshape(d_max, c_max),
            np.unique(dom), np.unique(cls))


def _normalize_or_none(vec_sum: torch.Tensor, count: int):
    """Unit centroid of a group, or None when empty or degenerate."""
    if count == 0:
        return None
    mean = vec_sum / count
    norm = torch.linalg.vector_norm(mean)
    if float(norm.detach()) < DEGENERATE_NORM:
        return None
    return mean / norm


def group_centroids(batch: RepresentationBatch) -> GroupCentroids:
    """Unit centroids of the class groups and the per-domain complements.

    ``cls_centroids[j]`` averages eligible vectors of class j across all
    domains; ``dom_minus[(i, j)]`` averages eligible domain-i vectors whose
    class is not j; ``dom_same[(i, j)]`` averages eligible domain-i class-j
    vectors.  Groups whose mean has norm below 1e-12 are treated as absent.
    """
    if not batch.eligibility.any():
        return GroupCentroids({}, {}, {})
    sums, counts, domains, classes = _group_sums(batch)

    cls_centroids = {}
    for j in classes:
        c = _normalize_or_none(sums[:, j].sum(0), int(counts[:, j].sum()))
        if c is not None:
            cls_centroids[int(j)] = c

    dom_minus, dom_same = {}, {}
    for i in domains:
        dom_sum = sums[i].sum(0)
        dom_count = int(counts[i].sum())
        for j in classes:
            minus = _normalize_or_none(dom_sum - sums[i, j],
                                       dom_count - int(counts[i, j]))
            if minus is not None:
                dom_minus[(int(i), int(j))] = minus
            if counts[i, j]:
                same = _normalize_or_none(sums[i, j], int(counts[i, j]))
                if same is not None:
                    dom_same[(int(i), int(j))] = same
    return GroupCentroids(cls_centroids, dom_minus, dom_same)


def _group_means(batch: RepresentationBatch):
    """Unnormalized group means for the mean-pairwise similarity mode."""
    sums, counts, domains, classes = _group_sums(batch)
    cls_means, dom_minus, dom_same = {}, {}, {}
    for j in classes:
        total = int(counts[:, j].sum())
        if total:
            cls_means[int(j)] = sums[:, j].sum(0) / total
    for i in domains:
        dom_sum = sums[i].sum(0)
        dom_count = int(counts[i].sum())
        for j in classes:
            rest = dom_count - int(counts[i, j])
            if rest:
                dom_minus[(int(i), int(j))] = (dom_sum - sums[i, j]) / rest
            if counts[i, j]:
                dom_same[(int(i), int(j))] = sums[i, j] / int(counts[i, j])
    return cls_means, dom_minus, dom_same, domains, classes


def _group_similarities(batch: RepresentationBatch, cfg: FixCLRConfig):
    """Per-domain similarity inputs to the contrastive terms.

    Returns ``(neg_sims, pos_sims)``: for each eligible domain i, the tensor
    of sim(DOM_minus[i][j], CLS_j) over classes j where both groups exist,
    and the tensor of sim(DOM_same[i][j], CLS_j) over classes present in the
    domain.  Dicts keyed by domain id; empty-entry domains are omitted.
    """
    if cfg.similarity_mode == "centroid":
        groups = group_centroids(batch)
        cls_vecs = groups.cls_centroids
        dom_minus, dom_same = groups.dom_minus, groups.dom_same
        domains = sorted({i for i, _ in dom_minus} | {i for i, _ in dom_same})
    else:
        cls_vecs, dom_minus, dom_same, domains, _ = _group_means(batch)

    def sim(a, b):
        return torch.clamp((a * b).sum(), -1.0, 1.0)

    neg_sims: dict[int, torch.Tensor] = {}
    pos_sims: dict[int, torch.Tensor] = {}
    for i in (int(i) for i in domains):
        negs = [sim(dom_minus[(i, j)], cls_vecs[j])
                for j in sorted(cls_vecs) if (i, j) in dom_minus]
        if negs:
            neg_sims[i] = torch.stack(negs)
        poss = [sim(dom_same[(i, j)], cls_vecs[j])
                for j in sorted(cls_vecs) if (i, j) in dom_same]
        if poss:
            pos_sims[i] = torch.stack(poss)
    return neg_sims, pos_sims


def repel_loss_from_similarities(neg_sims: dict[int, torch.Tensor],
                                 tau: float) -> torch.Tensor:
    """Repel-only loss given the per-domain negative similarities.

    Factored out so the gradient w.r.t. an individual similarity can be
    inspected directly: it is exp(s/tau) / (tau * sum exp(s'/tau)) > 0, so
    decreasing any similarity decreases the loss.
    """
    terms = [torch.logsumexp(s / tau, 0) - 1.0 / tau for s in neg_sims.values()]
    return torch.stack(terms).sum()


def attract_repel_loss_from_similarities(pos_mean: torch.Tensor,
                                         neg_sims: torch.Tensor,
                                         tau: float) -> torch.Tensor:
    """One domain's term of the positive-attraction ablation.

    ``-log( exp(p/tau) / (exp(p/tau) + sum_j exp(s_j/tau)) )`` computed as a
    single max-shifted log-sum-exp.
    """
    stacked = torch.cat([pos_mean.reshape(1), neg_sims]) / tau
    return torch.logsumexp(stacked, 0) - pos_mean / tau


def _check_batch(batch: RepresentationBatch):
    elig = batch.eligibility
    if elig.any():
        rows = torch.from_numpy(np.flatnonzero(elig))
        if not torch.isfinite(batch.vectors[rows]).all():
            raise NumericError("non-finite representation vectors")


def fixclr_loss(batch: RepresentationBatch, cfg: FixCLRConfig) -> LossResult:
    """Repel-only contrastive loss over the batch's eligible groups.

    Per source domain with at least one valid (domain, class) pair the loss
    adds ``logsumexp_j(sim/tau) - 1/tau``; absent or degenerate groups are
    skipped.  With fewer than two distinct eligible classes, or no valid
    pairs at all, the result is exactly 0 with ``skipped=True`` so training
    can proceed while few pseudo-labels survive the threshold.
    """
    if cfg.variant != VARIANT_REPEL:
        raise ConfigurationError("fixclr_loss requires cfg.variant='repel_only'")
    _check_batch(batch)
    zero = torch.zeros((), dtype=torch.float64)
    if batch.num_eligible_classes < 2:
        return LossResult(zero, True)
    neg_sims, _ = _group_similarities(batch, cfg)
    if not neg_sims:
        return LossResult(zero, True)
    return LossResult(repel_loss_from_similarities(neg_sims, cfg.temperature), False)


def fixclr_loss_with_positives(batch: RepresentationBatch,
                               cfg: FixCLRConfig) -> LossResult:
    """Ablation variant that adds same-class attraction.

    Per domain i, the positive score p_i is the mean of
    sim(DOM_same[i][j], CLS_j) over classes present in the domain, and the
    term is ``-log( exp(p_i/tau) / (exp(p_i/tau) + sum_j exp(s_ij/tau)) )``
    over the same negative pairs as the repel-only loss.  Domains lacking
    either a positive group or a negative pair are skipped.
    """
    if cfg.variant != VARIANT_POSITIVES:
        raise ConfigurationError(
            "fixclr_loss_with_positives requires cfg.variant='with_positives'"
        )
    _check_batch(batch)
    zero = torch.zeros((), dtype=torch.float64)
    if batch.num_eligible_classes < 2:
        return LossResult(zero, True)
    neg_sims, pos_sims = _group_similarities(batch, cfg)
    terms = []
    for i, negs in neg_sims.items():
        if i not in pos_sims:
            continue
        p = pos_sims[i].mean()
        terms.append(attract_repel_loss_from_similarities(p, negs, cfg.temperature))
    if not terms:
        return LossResult(zero, True)
    return LossResult(torch.stack(terms).sum(), False)


def loss_for_variant(batch: RepresentationBatch, cfg: FixCLRConfig) -> LossResult:
    """Dispatch on ``cfg.variant``."""
    if cfg.variant == VARIANT_REPEL:
        return fixclr_loss(batch, cfg)
    return fixclr_loss_with_positives(batch, cfg)


# ---------------------------------------------------------------------------
# Independent oracle: explicit scalar loops, no vectorized primitives
# ---------------------------------------------------------------------------


def _oracle_mean(vectors: list[list[float]]):
    p = len(vectors[0])
    mean = [0.0] * p
    for v in vectors:
        for k in range(p):
            mean[k] += v[k]
    for k in range(p):
        mean[k] /= len(vectors)
    return mean


def _oracle_norm(v: list[float]) -> float:
    s = 0.0
    for x in v:
        s += x * x
    return math.sqrt(s)


def _oracle_cos(a: list[float], b: list[float]) -> float:
    dot = 0.0
    for k in range(len(a)):
        dot += a[k] * b[k]
    na, nb = _oracle_norm(a), _oracle_norm(b)
    c = dot / (na * nb)
    return max(-1.0, min(1.0, c))


def _oracle_dot(a: list[float], b: list[float]) -> float:
    dot = 0.0
    for k in range(len(a)):
        dot += a[k] * b[k]
    return max(-1.0, min(1.0, dot))


def _oracle_logsumexp(values: list[float]) -> float:
    m = values[0]
    for v in values[1:]:
        if v > m:
            m = v
    s = 0.0
    for v in values:
        s += math.exp(v - m)
    return m + math.log(s)


def fixclr_oracle(batch: RepresentationBatch, cfg: FixCLRConfig) -> tuple[float, bool]:
    """Scalar-arithmetic recomputation of the selected variant.

    Ground truth for equivalence tests: plain Python floats, explicit loops,
    no array primitives.  Returns ``(value, skipped)`` mirroring the main
    implementations, including the degenerate-group and skip rules.
    """
    n = len(batch)
    if n > 512:
        raise ConfigurationError("oracle is limited to batches of at most 512 vectors")
    _check_batch(batch)

    vecs = [[float(x) for x in row] for row in batch.vectors.detach().numpy()]
    doms = [int(d) for d in batch.domain_ids]
    clss = [int(c) for c in batch.class_ids]
    elig = [bool(e) for e in batch.eligibility]

    eligible_classes = sorted({clss[s] for s in range(n) if elig[s]})
    if len(eligible_classes) < 2:
        return 0.0, True
    domains = sorted({doms[s] for s in range(n) if elig[s]})
    centroid_mode = cfg.similarity_mode == "centroid"

    def group_vec(members: list[int]):
        """Group representative (unit centroid or raw mean), or None."""
        if not members:
            return None
        mean = _oracle_mean([vecs[s] for s in members])
        if not centroid_mode:
            return mean
        norm = _oracle_norm(mean)
        if norm < DEGENERATE_NORM:
            return None
        return [x / norm for x in mean]

    sim = _oracle_cos if centroid_mode else _oracle_dot
    tau = cfg.temperature

    cls_groups = {}
    for j in eligible_classes:
        g = group_vec([s for s in range(n) if elig[s] and clss[s] == j])
        if g is not None:
            cls_groups[j] = g

    total = 0.0
    contributed = False
    for i in domains:
        neg_sims = []
        pos_sims = []
        for j in eligible_classes:
            if j not in cls_groups:
                continue
            minus = group_vec([s for s in range(n)
                               if elig[s] and doms[s] == i and clss[s] != j])
            if minus is not None:
                neg_sims.append(sim(minus, cls_groups[j]))
            same = group_vec([s for s in range(n)
                              if elig[s] and doms[s] == i and clss[s] == j])
            if same is not None:
                pos_sims.append(sim(same, cls_groups[j]))
        if not neg_sims:
            continue
        if cfg.variant == VARIANT_REPEL:
            total += _oracle_logsumexp([s / tau for s in neg_sims]) - 1.0 / tau
            contributed = True
        else:
            if not pos_sims:
                continue
            p = 0.0
            for s in pos_sims:
                p += s
            p /= len(pos_sims)
            total += _oracle_logsumexp([p / tau] + [s / tau for s in neg_sims]) - p / tau
            contributed = True
    if not contributed:
        return 0.0, True
    return total, False
