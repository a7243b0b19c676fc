from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from ..errors import DimensionMismatch, EmptySet
from .autograd import Tensor, as_tensor, param, softmax as _np_softmax

Activation = str  # "relu" | "none" | "sigmoid"


def _activate(x: Tensor, act: Activation) -> Tensor:
    if act == "relu":
        return x.relu()
    if act == "sigmoid":
        return x.sigmoid()
    if act == "none":
        return x
    raise ValueError(f"unknown activation {act!r}")


@dataclass
class DenseStack:
    """Fully connected layers applied to the last axis."""

    layers: List[Tuple[object, object, Activation]]

    def __post_init__(self):
        for (w0, _, _), (w1, _, _) in zip(self.layers, self.layers[1:]):
            if np.shape(w0)[1] != np.shape(w1)[0]:
                raise DimensionMismatch("adjacent layer dimensions do not chain")

    @property
    def in_dim(self) -> int:
        return np.shape(self.layers[0][0])[0]

    @property
    def out_dim(self) -> int:
        return np.shape(self.layers[-1][0])[1]

    @staticmethod
    def init_arrays(rng: np.random.Generator, dims: Sequence[int], prefix: str) -> Dict[str, np.ndarray]:
        """Glorot-uniform weights and zero biases for a stack with layer widths ``dims``."""
        out = {}
        for i, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
            bound = np.sqrt(6.0 / (fi + fo))
            out[f"{prefix}.{i}.W"] = rng.uniform(-bound, bound, size=(fi, fo))
            out[f"{prefix}.{i}.b"] = np.zeros(fo)
        return out

    @classmethod
    def from_params(cls, params, prefix: str, activations: Sequence[Activation]) -> "DenseStack":
        return cls([(params[f"{prefix}.{i}.W"], params[f"{prefix}.{i}.b"], a) for i, a in enumerate(activations)])


def shared_mlp_forward(stack: DenseStack, features) -> Tensor:
    """Apply the same dense stack to every feature vector (last axis)."""
    x = as_tensor(features)
    if x.shape[-1] != stack.in_dim:
        raise DimensionMismatch(f"feature dim {x.shape[-1]} != stack input dim {stack.in_dim}")
    for W, b, act in stack.layers:
        x = _activate(x @ as_tensor(W) + as_tensor(b), act)
    return x


def maxpool(features, axis: int = -2) -> Tensor:
    """Channelwise maximum over the member axis."""
    x = as_tensor(features)
    if x.shape[axis] == 0:
        raise EmptySet("maxpool over an empty set")
    return x.max(axis=axis)


def softmax(scores, axis: int = -1):
    """Max-subtracted softmax; Tensor in, Tensor out, array in, array out."""
    if isinstance(scores, Tensor):
        return scores.softmax(axis=axis)
    return _np_softmax(scores, axis=axis)


def sigmoid(x):
    if isinstance(x, Tensor):
        return x.sigmoid()
    return Tensor(x).sigmoid().data


class ParamView:
    """Lazily wraps named parameter arrays as Tensors.

    With ``requires_grad`` the wrappers collect gradients after
    ``Tensor.backward``; ``grads()`` returns them keyed by name.
    """

    def __init__(self, params: Dict[str, np.ndarray], requires_grad: bool = False, frozen=()):
        self.params = params
        self.requires_grad = requires_grad
        self.frozen = tuple(frozen)
        self._cache: Dict[str, Tensor] = {}

    def __getitem__(self, name: str) -> Tensor:
        t = self._cache.get(name)
        if t is None:
            trainable = self.requires_grad and not name.startswith(self.frozen)
            t = param(self.params[name]) if trainable else Tensor(self.params[name])
            self._cache[name] = t
        return t

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def grads(self) -> Dict[str, np.ndarray]:
        out = {}
        for name, t in self._cache.items():
            if t.requires_grad:
                out[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
        return out
