"""Fusion of view-specific representations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor

FUSION_KINDS = ("concat", "weighted_sum")


@dataclass
class FusionSpec:
    """``raw_weights`` are the trainable logits of the weighted sum (zeros at init)."""

    kind: str
    n_views: int
    raw_weights: Tensor | None = field(default=None)

    def __post_init__(self):
        if self.kind not in FUSION_KINDS:
            raise ConfigurationError(f"unknown fusion kind {self.kind!r}")
        if self.kind == "weighted_sum" and self.raw_weights is None:
            self.raw_weights = Tensor(np.zeros(self.n_views), requires_grad=True)
        elif self.raw_weights is not None and not isinstance(self.raw_weights, Tensor):
            self.raw_weights = Tensor(np.asarray(self.raw_weights, dtype=np.float64), requires_grad=True)
        if self.raw_weights is not None and self.raw_weights.shape != (self.n_views,):
            raise DimensionError(f"need {self.n_views} raw weights, got shape {self.raw_weights.shape}")

    def parameters(self) -> list[Tensor]:
        return [self.raw_weights] if self.kind == "weighted_sum" else []

    def effective_weights(self) -> np.ndarray:
        if self.kind != "weighted_sum":
            raise ConfigurationError("concat fusion has no weights")
        return T.softmax(self.raw_weights.detach()).data


def fuse(spec: FusionSpec, z: Sequence) -> Tensor:
    views = [T.as_tensor(v) for v in z]
    if len(views) != spec.n_views:
        raise DimensionError(f"fusion configured for {spec.n_views} views, got {len(views)}")
    if spec.kind == "concat":
        return T.concatenate(views, axis=1)
    shapes = {v.shape for v in views}
    if len(shapes) != 1:
        raise DimensionError(f"weighted-sum fusion needs equal representation shapes, got {sorted(shapes)}")
    w = T.softmax(spec.raw_weights, axis=0)
    out = None
    for v, view in enumerate(views):
        term = view * w[v]
        out = term if out is None else out + term
    return out
