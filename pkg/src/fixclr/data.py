"""Multi-domain dataset model, synthetic generation, splitting, and batching.

A dataset is a flat collection of samples, each tagged with a domain id, a
class id, and a unique sample id.  Synthetic data is a shared layout of
Gaussian class clusters to which each domain applies its own invertible
affine transform (rotation in the (0, 1) coordinate plane, additive offset,
uniform scale), so domain-invariant representations are achievable in
principle and the amount of residual domain information is measurable.

All randomness goes through ``numpy.random.Generator`` (PCG64, as returned
by ``numpy.random.default_rng``).  Every operation is a pure function of its
inputs and the seed, so identical seeds give bitwise-identical outputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError

DATASET_FORMAT = "mdds-v1"


@dataclass(frozen=True)
class Sample:
    """One observation: a feature vector tagged with domain and class ids."""

    sample_id: int
    domain_id: int
    class_id: int
    features: np.ndarray


@dataclass(frozen=True)
class DomainTransform:
    """Invertible affine map applied to one domain's samples.

    ``rotation_deg`` rotates in the fixed (axis 0, axis 1) plane, ``offset``
    is added per coordinate, and ``scale`` multiplies uniformly.  ``scale``
    must be nonzero so the transform stays invertible.
    """

    rotation_deg: float = 0.0
    offset: tuple[float, ...] = ()
    scale: float = 1.0

    def __post_init__(self):
        if self.scale == 0:
            raise ConfigurationError("domain transform scale must be nonzero")

    def apply(self, x: np.ndarray, feature_dim: int) -> np.ndarray:
        """Apply scale, rotation, then offset to rows of ``x``."""
        out = np.array(x, dtype=np.float64, copy=True) * self.scale
        theta = math.radians(self.rotation_deg)
        if theta != 0.0 and feature_dim >= 2:
            c, s = math.cos(theta), math.sin(theta)
            x0 = out[..., 0].copy()
            x1 = out[..., 1].copy()
            out[..., 0] = c * x0 - s * x1
            out[..., 1] = s * x0 + c * x1
        if self.offset:
            off = np.asarray(self.offset, dtype=np.float64)
            if off.shape != (feature_dim,):
                raise ConfigurationError(
                    f"offset length {off.shape[0]} does not match feature_dim {feature_dim}"
                )
            out = out + off
        return out


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters for the synthetic multi-domain generator."""

    num_domains: int
    num_classes: int
    feature_dim: int
    samples_per_domain_class: int
    class_separation: float = 4.0
    domain_transforms: tuple[DomainTransform, ...] = ()
    noise_std: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if min(self.num_domains, self.num_classes, self.feature_dim,
               self.samples_per_domain_class) <= 0:
            raise ConfigurationError("all synthetic counts must be positive")
        if self.class_separation <= 0:
            raise ConfigurationError("class_separation must be > 0")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be >= 0")
        if self.domain_transforms and len(self.domain_transforms) != self.num_domains:
            raise ConfigurationError(
                f"got {len(self.domain_transforms)} domain transforms for "
                f"{self.num_domains} domains"
            )

    def transforms(self) -> tuple[DomainTransform, ...]:
        if self.domain_transforms:
            return self.domain_transforms
        return tuple(DomainTransform() for _ in range(self.num_domains))

    def to_dict(self) -> dict:
        return {
            "num_domains": self.num_domains,
            "num_classes": self.num_classes,
            "feature_dim": self.feature_dim,
            "samples_per_domain_class": self.samples_per_domain_class,
            "class_separation": self.class_separation,
            "domain_transforms": [
                {"rotation_deg": t.rotation_deg, "offset": list(t.offset), "scale": t.scale}
                for t in self.transforms()
            ],
            "noise_std": self.noise_std,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        transforms = tuple(
            DomainTransform(t["rotation_deg"], tuple(t["offset"]), t["scale"])
            for t in d.get("domain_transforms", [])
        )
        return cls(
            num_domains=d["num_domains"],
            num_classes=d["num_classes"],
            feature_dim=d["feature_dim"],
            samples_per_domain_class=d["samples_per_domain_class"],
            class_separation=d.get("class_separation", 4.0),
            domain_transforms=transforms,
            noise_std=d.get("noise_std", 0.5),
            seed=d["seed"],
        )


class MultiDomainDataset:
    """Ordered collection of samples with domain/class metadata.

    Features are stored as one ``(N, F)`` float64 array; per-sample metadata
    as int arrays.  Sample ids are unique but not required to equal row
    indices, so lookups go through an id -> row map.
    """

    def __init__(self, features, domain_ids, class_ids, sample_ids,
                 num_domains, num_classes, provenance=None):
        self.features = np.asarray(features, dtype=np.float64)
        self.domain_ids = np.asarray(domain_ids, dtype=np.int64)
        self.class_ids = np.asarray(class_ids, dtype=np.int64)
        self.sample_ids = np.asarray(sample_ids, dtype=np.int64)
        self.num_domains = int(num_domains)
        self.num_classes = int(num_classes)
        self.provenance = dict(provenance or {})
        self._validate()
        self._row_of_id = {int(s): i for i, s in enumerate(self.sample_ids)}

    def _validate(self):
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise DataError("features must be a 2-d (N, F) array")
        if not (len(self.domain_ids) == len(self.class_ids) == len(self.sample_ids) == n):
            raise DataError("metadata arrays must match the number of samples")
        if len(np.unique(self.sample_ids)) != n:
            raise DataError("sample ids must be unique")
        if n and (self.domain_ids.min() < 0 or self.domain_ids.max() >= self.num_domains):
            raise DataError("domain_id out of range")
        if n and (self.class_ids.min() < 0 or self.class_ids.max() >= self.num_classes):
            raise DataError("class_id out of range")

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    def __getitem__(self, i: int) -> Sample:
        return Sample(int(self.sample_ids[i]), int(self.domain_ids[i]),
                      int(self.class_ids[i]), self.features[i])

    def rows_for_ids(self, ids) -> np.ndarray:
        """Row indices for the given sample ids, in order."""
        return np.fromiter((self._row_of_id[int(s)] for s in ids), dtype=np.int64,
                           count=len(ids))

    def features_for_ids(self, ids) -> np.ndarray:
        return self.features[self.rows_for_ids(ids)]

    def domain_rows(self, domain_id: int) -> np.ndarray:
        return np.flatnonzero(self.domain_ids == domain_id)


@dataclass(frozen=True)
class SplitSpec:
    """One leave-one-domain-out split with a fixed label budget.

    ``labeled_ids`` and ``unlabeled_ids`` partition the source-domain sample
    ids; the target domain never appears in either set, so no training
    operation can touch target data.
    """

    target_domain: int
    source_domains: frozenset[int]
    labeled_ids: frozenset[int]
    unlabeled_ids: frozenset[int]

    def __post_init__(self):
        if self.target_domain in self.source_domains:
            raise DataError("target domain cannot also be a source domain")
        if self.labeled_ids & self.unlabeled_ids:
            raise DataError("labeled and unlabeled ids must be disjoint")

    def labeled_ids_sorted(self) -> np.ndarray:
        return np.array(sorted(self.labeled_ids), dtype=np.int64)

    def unlabeled_ids_sorted(self) -> np.ndarray:
        return np.array(sorted(self.unlabeled_ids), dtype=np.int64)


def synth_generate(config: SyntheticConfig) -> MultiDomainDataset:
    """Generate a synthetic multi-domain dataset.

    Class means are a shared random layout rescaled so that the minimum
    pairwise distance equals ``class_separation``.  Every domain sees the
    same clusters (same means, isotropic Gaussian noise) pushed through its
    own affine transform.  Identical configs produce bitwise-identical
    datasets.
    """
    d, c, f = config.num_domains, config.num_classes, config.feature_dim
    per = config.samples_per_domain_class
    rng = np.random.default_rng(config.seed)

    means = rng.standard_normal((c, f))
    if c > 1:
        dists = [np.linalg.norm(means[a] - means[b])
                 for a in range(c) for b in range(a + 1, c)]
        min_dist = min(dists)
        if min_dist < 1e-9:
            raise DataError("degenerate class-mean layout; try another seed")
        means = means * (config.class_separation / min_dist)

    transforms = config.transforms()
    features = np.empty((d * c * per, f), dtype=np.float64)
    domain_ids = np.empty(d * c * per, dtype=np.int64)
    class_ids = np.empty(d * c * per, dtype=np.int64)
    row = 0
    for dom in range(d):
        for cls in range(c):
            base = means[cls] + config.noise_std * rng.standard_normal((per, f))
            features[row:row + per] = transforms[dom].apply(base, f)
            domain_ids[row:row + per] = dom
            class_ids[row:row + per] = cls
            row += per

    provenance = {"kind": "synthetic", "config": config.to_dict(), "seed": config.seed}
    return MultiDomainDataset(features, domain_ids, class_ids,
                              np.arange(d * c * per), d, c, provenance)


def leave_one_domain_out_splits(ds: MultiDomainDataset, n_labels: int,
                                seed: int = 0) -> list[SplitSpec]:
    """Build one split per target domain with ``n_labels`` labels per source
    (domain, class) pair.

    Labeled ids are a seeded shuffle followed by a prefix take within each
    (domain, class) pool, so the budget is exact and reproducible.  Raises
    :class:`DataError` naming the first (domain, class) pair whose pool is
    smaller than the budget.
    """
    if ds.num_domains < 2:
        raise DataError("leave-one-domain-out needs at least 2 domains")
    if n_labels <= 0:
        raise ConfigurationError("n_labels must be positive")

    rng = np.random.default_rng(seed)
    splits = []
    for target in range(ds.num_domains):
        sources = [dom for dom in range(ds.num_domains) if dom != target]
        labeled: list[int] = []
        unlabeled: list[int] = []
        for dom in sources:
            for cls in range(ds.num_classes):
                mask = (ds.domain_ids == dom) & (ds.class_ids == cls)
                pool = np.sort(ds.sample_ids[mask])
                if len(pool) < n_labels:
                    raise DataError(
                        f"domain {dom}, class {cls}: only {len(pool)} samples "
                        f"for a budget of {n_labels}"
                    )
                pool = rng.permutation(pool)
                labeled.extend(int(s) for s in pool[:n_labels])
                unlabeled.extend(int(s) for s in pool[n_labels:])
        splits.append(SplitSpec(target, frozenset(sources),
                                frozenset(labeled), frozenset(unlabeled)))
    return splits


def mixed_domain_batch(split: SplitSpec, ds: MultiDomainDataset, batch_size: int,
                       mu: int, rng: np.random.Generator):
    """Draw one labeled and one unlabeled minibatch, stratified by domain.

    The labeled batch has ``batch_size`` samples, exactly
    ``batch_size / |sources|`` from each source domain; the unlabeled batch
    has ``mu * batch_size``, stratified the same way.  Sampling is uniform
    with replacement within each per-domain pool.  Returns two arrays of
    sample ids.
    """
    sources = sorted(split.source_domains)
    if batch_size % len(sources) != 0:
        raise ConfigurationError(
            f"batch_size {batch_size} is not divisible by {len(sources)} source domains"
        )
    if mu < 1:
        raise ConfigurationError("mu must be >= 1")

    per_dom_labeled = batch_size // len(sources)
    per_dom_unlabeled = mu * batch_size // len(sources)

    labeled_pool = split.labeled_ids_sorted()
    unlabeled_pool = split.unlabeled_ids_sorted()
    labeled_dom = ds.domain_ids[ds.rows_for_ids(labeled_pool)]
    unlabeled_dom = ds.domain_ids[ds.rows_for_ids(unlabeled_pool)]

    labeled_batch, unlabeled_batch = [], []
    for dom in sources:
        lab = labeled_pool[labeled_dom == dom]
        unl = unlabeled_pool[unlabeled_dom == dom]
        if len(lab) == 0 or len(unl) == 0:
            raise DataError(f"source domain {dom} has an empty labeled or unlabeled pool")
        labeled_batch.append(rng.choice(lab, size=per_dom_labeled, replace=True))
        unlabeled_batch.append(rng.choice(unl, size=per_dom_unlabeled, replace=True))
    return np.concatenate(labeled_batch), np.concatenate(unlabeled_batch)


def save_dataset(ds: MultiDomainDataset, path) -> None:
    """Write a dataset as a single self-describing text file.

    Line 1 is ``#`` followed by a JSON header with the format tag, counts,
    and provenance.  Every following line is one sample:
    ``sample_id,domain_id,class_id,f_0,...,f_{F-1}`` with features printed
    via ``repr`` so float64 values round-trip exactly.  Output is
    byte-identical for identical datasets.
    """
    header = {
        "format": DATASET_FORMAT,
        "num_domains": ds.num_domains,
        "num_classes": ds.num_classes,
        "feature_dim": ds.feature_dim,
        "num_samples": len(ds),
        "provenance": ds.provenance,
    }
    lines = ["#" + json.dumps(header, sort_keys=True)]
    for i in range(len(ds)):
        fields = [str(int(ds.sample_ids[i])), str(int(ds.domain_ids[i])),
                  str(int(ds.class_ids[i]))]
        fields.extend(repr(float(v)) for v in ds.features[i])
        lines.append(",".join(fields))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> MultiDomainDataset:
    """Read a dataset written by :func:`save_dataset`."""
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise DataError(f"{path}: missing dataset header line")
    header = json.loads(lines[0][1:])
    if header.get("format") != DATASET_FORMAT:
        raise DataError(f"{path}: unsupported dataset format {header.get('format')!r}")
    n, f = header["num_samples"], header["feature_dim"]
    body = lines[1:]
    if len(body) != n:
        raise DataError(f"{path}: header promises {n} samples, found {len(body)}")

    sample_ids = np.empty(n, dtype=np.int64)
    domain_ids = np.empty(n, dtype=np.int64)
    class_ids = np.empty(n, dtype=np.int64)
    features = np.empty((n, f), dtype=np.float64)
    for i, line in enumerate(body):
        parts = line.split(",")
        if len(parts) != 3 + f:
            raise DataError(f"{path}: line {i + 2} has {len(parts)} fields, expected {3 + f}")
        sample_ids[i], domain_ids[i], class_ids[i] = int(parts[0]), int(parts[1]), int(parts[2])
        features[i] = [float(v) for v in parts[3:]]
    return MultiDomainDataset(features, domain_ids, class_ids, sample_ids,
                              header["num_domains"], header["num_classes"],
                              header.get("provenance"))
