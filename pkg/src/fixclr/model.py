"""Encoder / projection head / classifier model.

A small fully connected network in float64: a two-hidden-layer encoder
produces the representation, a two-layer projection head maps it to a unit
vector consumed by the contrastive regularizer, and a linear classifier
maps it to class logits.  The projection output is always L2-normalized.

Initialization is fan-in scaled uniform (every weight and bias of a layer
drawn from U(-1/sqrt(fan_in), +1/sqrt(fan_in))) from a seeded numpy PCG64
stream, so identical configs give identical parameters.  Forward passes are
counted per input row on the module itself, which lets the trainer assert
that adding the regularizer costs no extra passes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError

INIT_SCHEME = "fan_in_uniform"

_ACTIVATIONS = {"tanh": nn.Tanh, "relu": nn.ReLU, "softplus": nn.Softplus}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and initialization parameters."""

    input_dim: int
    num_classes: int
    hidden_dims: tuple[int, ...] = (64, 64)
    proj_hidden_dim: int = 64
    proj_dim: int = 32
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        if self.input_dim <= 0 or self.num_classes <= 0:
            raise ConfigurationError("input_dim and num_classes must be positive")
        if not self.hidden_dims:
            raise ConfigurationError("encoder needs at least one hidden layer")
        if self.activation not in _ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def repr_dim(self) -> int:
        return self.hidden_dims[-1]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "hidden_dims": list(self.hidden_dims),
            "proj_hidden_dim": self.proj_hidden_dim,
            "proj_dim": self.proj_dim,
            "activation": self.activation,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            input_dim=d["input_dim"],
            num_classes=d["num_classes"],
            hidden_dims=tuple(d.get("hidden_dims", (64, 64))),
            proj_hidden_dim=d.get("proj_hidden_dim", 64),
            proj_dim=d.get("proj_dim", 32),
            activation=d.get("activation", "tanh"),
            seed=d.get("seed", 0),
        )


@dataclass
class ForwardResult:
    """Per-batch outputs: encoder representation, unit projection, logits."""

    representation: torch.Tensor
    projected: torch.Tensor
    logits: torch.Tensor


class EncoderModel(nn.Module):
    """MLP encoder with projection head and linear classifier (float64)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        act = _ACTIVATIONS[config.activation]

        layers: list[nn.Module] = []
        prev = config.input_dim
        for width in config.hidden_dims:
            layers.append(nn.Linear(prev, width, dtype=torch.float64))
            layers.append(act())
            prev = width
        self.encoder = nn.Sequential(*layers)
        self.projector = nn.Sequential(
            nn.Linear(config.repr_dim, config.proj_hidden_dim, dtype=torch.float64),
            act(),
            nn.Linear(config.proj_hidden_dim, config.proj_dim, dtype=torch.float64),
        )
        self.classifier = nn.Linear(config.repr_dim, config.num_classes,
                                    dtype=torch.float64)
        self.forward_passes = 0
        self._init_parameters(config.seed)

    def _init_parameters(self, seed: int):
        rng = np.random.default_rng(seed)
        for module in self.modules():
            if isinstance(module, nn.Linear):
                fan_in = module.in_features
                bound = 1.0 / np.sqrt(fan_in)
                w = rng.uniform(-bound, bound, size=(module.out_features, fan_in))
                b = rng.uniform(-bound, bound, size=module.out_features)
                with torch.no_grad():
                    module.weight.copy_(torch.from_numpy(w))
                    module.bias.copy_(torch.from_numpy(b))

    def forward(self, x) -> ForwardResult:
        x = torch.as_tensor(np.asarray(x), dtype=torch.float64) \
            if not isinstance(x, torch.Tensor) else x.to(torch.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ConfigurationError(
                f"expected input of shape (n, {self.config.input_dim}), got {tuple(x.shape)}"
            )
        self.forward_passes += x.shape[0]
        rep = self.encoder(x)
        z = self.projector(rep)
        norm = torch.linalg.vector_norm(z, dim=1, keepdim=True).clamp_min(1e-12)
        return ForwardResult(rep, z / norm, self.classifier(rep))

    def parameter_vector(self) -> np.ndarray:
        """All parameters flattened in ``named_parameters`` order."""
        return np.concatenate(
            [p.detach().numpy().ravel() for _, p in self.named_parameters()]
        )

    def load_parameter_vector(self, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64)
        offset = 0
        with torch.no_grad():
            for _, p in self.named_parameters():
                n = p.numel()
                p.copy_(torch.from_numpy(flat[offset:offset + n].reshape(p.shape)))
                offset += n
        if offset != flat.size:
            raise ConfigurationError(
                f"parameter vector has {flat.size} values, model needs {offset}"
            )


def save_checkpoint(model: EncoderModel, path, epoch: int = 0, step: int = 0,
                    momentum: np.ndarray | None = None, extra: dict | None = None):
    """Write a checkpoint: JSON header plus the flat parameter array.

    The header carries the architecture config (including the init seed and
    scheme), the epoch/step counters, and the parameter name order.  The
    optional ``momentum`` array stores SGD momentum buffers in the same flat
    order so training can resume.  Output bytes are deterministic.
    """
    doc = {
        "header": {
            "format": "fixclr-checkpoint-v1",
            "architecture": model.config.to_dict(),
            "init_scheme": INIT_SCHEME,
            "seed": model.config.seed,
            "epoch": epoch,
            "step": step,
            "parameter_order": [name for name, _ in model.named_parameters()],
            "extra": extra or {},
        },
        "parameters": [float(v) for v in model.parameter_vector()],
    }
    if momentum is not None:
        doc["momentum"] = [float(v) for v in np.asarray(momentum, dtype=np.float64)]
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_checkpoint(path) -> tuple[EncoderModel, dict]:
    """Rebuild a model from :func:`save_checkpoint` output.

    Returns the model and the full checkpoint document (header plus any
    momentum buffers) for callers that resume training.
    """
    doc = json.loads(Path(path).read_text())
    header = doc["header"]
    if header.get("format") != "fixclr-checkpoint-v1":
        raise ConfigurationError(f"{path}: unsupported checkpoint format")
    model = EncoderModel(ModelConfig.from_dict(header["architecture"]))
    model.load_parameter_vector(np.array(doc["parameters"], dtype=np.float64))
    return model, doc
