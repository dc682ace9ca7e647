"""Parameter containers shared by the model components."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class Module:
    """Anything that owns Parameters, directly or through child modules."""

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        out = []
        for value in vars(self).values():
            out.extend(_collect(value))
        return [(p.name, p) for p in out]

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in state:
                raise KeyError(f"missing parameter {name}")
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)


def _collect(value) -> list[Parameter]:
    if isinstance(value, Parameter):
        return [value]
    if isinstance(value, Module):
        return value.parameters()
    if isinstance(value, dict):
        return [p for v in value.values() for p in _collect(v)]
    if isinstance(value, (list, tuple)):
        return [p for v in value for p in _collect(v)]
    return []


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, name: str, rng: np.random.Generator,
                 bias: bool = True):
        bound = 1.0 / np.sqrt(d_in)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(d_in, d_out)), f"{name}.weight")
        self.bias = Parameter(np.zeros(d_out), f"{name}.bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight)
        return out if self.bias is None else T.add(out, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, name: str):
        self.gain = Parameter(np.ones(d), f"{name}.gain")
        self.bias = Parameter(np.zeros(d), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.mul(T.layer_norm_last_axis(x), self.gain), self.bias)


class MLP(Module):
    """Linear -> ReLU -> Linear."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, name: str, rng: np.random.Generator):
        self.fc1 = Linear(d_in, d_hidden, f"{name}.fc1", rng)
        self.fc2 = Linear(d_hidden, d_out, f"{name}.fc2", rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


def masked_mean_pool(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over axis 1 of a (B, L, d) tensor, counting only ``mask`` rows."""
    mask = np.asarray(mask, dtype=np.float64)
    counts = mask.sum(axis=1, keepdims=True)
    if np.any(counts == 0):
        raise T.ContractViolation("masked_mean_pool: a row has no unmasked entries")
    weights = (mask / counts)[:, None, :]
    return T.reshape(T.matmul(weights, x), (x.shape[0], x.shape[2]))
