"""Small dense classifier operating on flat parameter vectors.

The network is ``input -> hidden ... -> num_classes`` with ReLU hidden
activations and a softmax cross-entropy loss. The final linear layer
(weights and bias) is the head; everything before it is the core. All
arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .params import ParamVector, assemble, split  # noqa: F401  (re-exported)


@dataclass(frozen=True)
class Architecture:
    """Shape of the classifier: layer widths and activation."""

    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int
    activation: str = "relu"

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.num_classes < 2:
            raise ValueError("need input_dim >= 1 and num_classes >= 2")
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden_dims must be a non-empty list of positive widths")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.num_classes)

    @property
    def param_count(self) -> int:
        return kernels.param_count(self.layer_dims)

    @property
    def head_len(self) -> int:
        # final linear layer: weights plus bias
        return self.hidden_dims[-1] * self.num_classes + self.num_classes

    @property
    def core_len(self) -> int:
        return self.param_count - self.head_len


@dataclass(frozen=True)
class Batch:
    """A minibatch of labelled feature vectors."""

    features: np.ndarray  # (batch, input_dim) float64
    labels: np.ndarray  # (batch,) int64

    def __post_init__(self) -> None:
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        if features.ndim != 2 or labels.ndim != 1:
            raise ValueError("features must be (batch, dim), labels (batch,)")
        if features.shape[0] != labels.shape[0] or features.shape[0] == 0:
            raise ValueError("features and labels must be non-empty and aligned")
        if labels.min() < 0:
            raise ValueError("labels must be non-negative")

    def __len__(self) -> int:
        return int(self.labels.size)


def _check(arch: Architecture, params: ParamVector, batch: Batch | None = None) -> None:
    if len(params) != arch.param_count:
        raise ValueError(
            f"parameter vector has {len(params)} entries, architecture needs "
            f"{arch.param_count}"
        )
    if params.core_len != arch.core_len:
        raise ValueError(
            f"core_len {params.core_len} does not match architecture ({arch.core_len})"
        )
    if batch is not None:
        if batch.features.shape[1] != arch.input_dim:
            raise ValueError(
                f"batch feature dim {batch.features.shape[1]} != input_dim {arch.input_dim}"
            )
        if int(batch.labels.max()) >= arch.num_classes:
            raise ValueError("batch contains a label out of range for num_classes")


def init_params(arch: Architecture, seed) -> ParamVector:
    """Draw fresh parameters, uniform per layer in +-sqrt(6/(fan_in+fan_out))."""
    rng = np.random.default_rng(seed)
    chunks = []
    dims = arch.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out + fan_out))
    return ParamVector(np.concatenate(chunks), arch.core_len)


def batch_loss(arch: Architecture, params: ParamVector, batch: Batch) -> float:
    """Mean cross-entropy of the batch under the given parameters."""
    _check(arch, params, batch)
    return kernels.loss_value(params.values, arch.layer_dims, batch.features, batch.labels)


def loss_and_grad(
    arch: Architecture, params: ParamVector, batch: Batch
) -> tuple[float, ParamVector]:
    """Loss and its gradient with respect to every parameter."""
    _check(arch, params, batch)
    loss, grad = kernels.loss_grad(
        params.values, arch.layer_dims, batch.features, batch.labels
    )
    return loss, ParamVector(grad, arch.core_len)


def sgd_steps(
    arch: Architecture,
    params: ParamVector,
    batch: Batch,
    eta: float,
    num_steps: int,
    return_first_loss: bool = False,
):
    """Run ``num_steps`` plain SGD steps on the same batch.

    The input vector is left untouched; a new ParamVector is returned.
    With ``return_first_loss=True`` the result is ``(params, loss)`` where
    the loss is evaluated at the incoming parameters.
    """
    _check(arch, params, batch)
    if num_steps < 0:
        raise ValueError("num_steps must be non-negative")
    values = params.values.copy()
    first_loss = kernels.sgd_steps_inplace(
        values, arch.layer_dims, batch.features, batch.labels, float(eta), num_steps
    )
    out = ParamVector(values, arch.core_len)
    if return_first_loss:
        if num_steps == 0:
            first_loss = batch_loss(arch, params, batch)
        return out, first_loss
    return out


def predict(arch: Architecture, params: ParamVector, features: np.ndarray) -> np.ndarray:
    """Most likely class index for each row of ``features``."""
    _check(arch, params)
    features = np.ascontiguousarray(features, dtype=np.float64)
    scores = kernels.logits(params.values, arch.layer_dims, features)
    return scores.argmax(axis=1)
