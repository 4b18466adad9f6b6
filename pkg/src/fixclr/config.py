"""Experiment configuration: one structured JSON file per experiment.

Schema (unknown keys are rejected anywhere, and every seed must be spelled
out so runs are reproducible from the file alone)::

    {
      "dataset": {"synthetic": {<SyntheticConfig fields, seed required>}}
                 | {"path": "<dataset file written by generate-data>"},
      "split":   {"n_labels": int, "seed": int},
      "model":   {optional: hidden_dims, proj_hidden_dim, proj_dim,
                  activation, seed},
      "train":   {seed required; optional: epochs, steps_per_epoch, base_lr,
                  momentum, weight_decay, batch_size, mu, regularizer_view,
                  ema, probe_max_samples, probe_folds, probe_kind,
                  augment: {noise_std_weak, noise_std_strong,
                            mask_fraction_strong}},
      "method":  {optional: regularizer, fixclr: {temperature, loss_weight,
                  similarity_mode}, threshold: {kind, value}},
      "output_dir": "runs/my-experiment"
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .augment import AugmentationPolicy
from .data import SyntheticConfig
from .errors import ConfigurationError
from .losses import FixCLRConfig
from .pseudo_label import ThresholdPolicy
from .trainer import REGULARIZERS, TrainConfig

_DATASET_KEYS = {"synthetic", "path"}
_SYNTH_KEYS = {"num_domains", "num_classes", "feature_dim",
               "samples_per_domain_class", "class_separation",
               "domain_transforms", "noise_std", "seed"}
_TRANSFORM_KEYS = {"rotation_deg", "offset", "scale"}
_SPLIT_KEYS = {"n_labels", "seed"}
_MODEL_KEYS = {"hidden_dims", "proj_hidden_dim", "proj_dim", "activation", "seed"}
_TRAIN_KEYS = {"epochs", "steps_per_epoch", "base_lr", "momentum", "weight_decay",
               "batch_size", "mu", "seed", "regularizer_view", "ema",
               "probe_max_samples", "probe_folds", "probe_kind", "augment"}
_AUGMENT_KEYS = {"noise_std_weak", "noise_std_strong", "mask_fraction_strong"}
_METHOD_KEYS = {"regularizer", "fixclr", "threshold"}
_FIXCLR_KEYS = {"temperature", "loss_weight", "similarity_mode"}
_THRESHOLD_KEYS = {"kind", "value"}
_TOP_KEYS = {"dataset", "split", "model", "train", "method", "output_dir"}


def _check_keys(section: dict, allowed: set[str], where: str):
    if not isinstance(section, dict):
        raise ConfigurationError(f"config section {where!r} must be an object")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigurationError(f"unknown config key(s) in {where}: {sorted(unknown)}")


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigurationError(f"missing required config key {where}.{key}")
    return section[key]


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment description."""

    dataset_synthetic: SyntheticConfig | None
    dataset_path: str | None
    n_labels: int
    split_seed: int
    model_overrides: dict
    train: TrainConfig
    output_dir: str
    raw: dict  # the validated source document, for provenance copies

    @property
    def method(self) -> str:
        return self.train.regularizer


def parse_experiment_config(doc: dict) -> ExperimentConfig:
    """Validate a config document and build the typed pieces."""
    _check_keys(doc, _TOP_KEYS, "top level")
    dataset = _require(doc, "dataset", "top level")
    _check_keys(dataset, _DATASET_KEYS, "dataset")
    if ("synthetic" in dataset) == ("path" in dataset):
        raise ConfigurationError("dataset needs exactly one of 'synthetic' or 'path'")

    synth = None
    if "synthetic" in dataset:
        section = dataset["synthetic"]
        _check_keys(section, _SYNTH_KEYS, "dataset.synthetic")
        _require(section, "seed", "dataset.synthetic")
        for i, t in enumerate(section.get("domain_transforms", [])):
            _check_keys(t, _TRANSFORM_KEYS, f"dataset.synthetic.domain_transforms[{i}]")
        synth = SyntheticConfig.from_dict(section)

    split = _require(doc, "split", "top level")
    _check_keys(split, _SPLIT_KEYS, "split")
    n_labels = int(_require(split, "n_labels", "split"))
    split_seed = int(_require(split, "seed", "split"))

    model_section = doc.get("model", {})
    _check_keys(model_section, _MODEL_KEYS, "model")
    model_overrides = dict(model_section)
    if "hidden_dims" in model_overrides:
        model_overrides["hidden_dims"] = tuple(model_overrides["hidden_dims"])

    train_section = _require(doc, "train", "top level")
    _check_keys(train_section, _TRAIN_KEYS, "train")
    train_seed = int(_require(train_section, "seed", "train"))
    augment_section = train_section.get("augment", {})
    _check_keys(augment_section, _AUGMENT_KEYS, "train.augment")
    augment = AugmentationPolicy("weak", **augment_section)

    method_section = doc.get("method", {})
    _check_keys(method_section, _METHOD_KEYS, "method")
    regularizer = method_section.get("regularizer", "none")
    if regularizer not in REGULARIZERS:
        raise ConfigurationError(f"unknown regularizer {regularizer!r}")
    fixclr_section = method_section.get("fixclr", {})
    _check_keys(fixclr_section, _FIXCLR_KEYS, "method.fixclr")
    fixclr = FixCLRConfig(**fixclr_section)
    threshold_section = method_section.get("threshold", {})
    _check_keys(threshold_section, _THRESHOLD_KEYS, "method.threshold")
    if threshold_section.get("kind", "fixed") != "fixed":
        raise ConfigurationError("config files support only fixed thresholds; "
                                 "plugin policies are a library-level interface")
    threshold = ThresholdPolicy("fixed", threshold_section.get("value", 0.95))

    train_kwargs = {k: v for k, v in train_section.items()
                    if k not in ("augment",)}
    train_kwargs["seed"] = train_seed
    train = TrainConfig(threshold=threshold, fixclr=fixclr,
                        regularizer=regularizer, augment=augment, **train_kwargs)

    return ExperimentConfig(
        dataset_synthetic=synth,
        dataset_path=dataset.get("path"),
        n_labels=n_labels,
        split_seed=split_seed,
        model_overrides=model_overrides,
        train=train,
        output_dir=str(doc.get("output_dir", "runs")),
        raw=doc,
    )


def load_experiment_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: config must be a JSON object")
    return parse_experiment_config(doc)
