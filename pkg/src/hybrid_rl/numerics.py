"""Dense numeric primitives shared by every model in the package.

Gradients are written out by hand for each model; this module only supplies
the building blocks (softmax, L1 distance, mode products), a parameter store
with parallel gradient buffers, RMSProp, and a central-difference checker.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


def mode_m_product(tensor: np.ndarray, vec: np.ndarray, mode: int) -> np.ndarray:
    """Contract a tensor with a vector along ``mode`` (1-based).

    The contracted mode disappears, so a 3-tensor yields a matrix whose axes
    are the two remaining modes in their original order.
    """
    tensor = np.asarray(tensor, dtype=np.float64)
    vec = np.asarray(vec, dtype=np.float64)
    if not 1 <= mode <= tensor.ndim:
        raise ShapeError(f"mode {mode} out of range for a {tensor.ndim}-tensor")
    if vec.ndim != 1 or vec.shape[0] != tensor.shape[mode - 1]:
        raise ShapeError(
            f"vector of shape {vec.shape} does not match mode {mode} "
            f"of size {tensor.shape[mode - 1]}"
        )
    return np.tensordot(tensor, vec, axes=([mode - 1], [0]))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, shifted by the row max for stability."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def l1_distance(u: np.ndarray, v: np.ndarray) -> tuple[float, np.ndarray]:
    """Return ``sum|u - v|`` and its subgradient with respect to ``u``.

    The subgradient is ``sign(u - v)`` with 0 at ties; the gradient with
    respect to ``v`` is its negation.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ShapeError(f"l1_distance got shapes {u.shape} and {v.shape}")
    diff = u - v
    return float(np.abs(diff).sum()), np.sign(diff)


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ParamStore:
    """Named float64 arrays with a gradient buffer of identical shape each."""

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already registered")
        arr = np.array(value, dtype=np.float64, order="C")
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def num_params(self, names=None) -> int:
        names = self.params if names is None else names
        return int(sum(self.params[n].size for n in names))

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.grads.values())))

    def clip_grad_norm(self, max_norm: float) -> float:
        """Rescale all gradients in place so their global L2 norm is at most ``max_norm``."""
        norm = self.grad_norm()
        if not np.isfinite(norm):
            raise NumericError(f"non-finite gradient norm {norm}")
        if norm > max_norm:
            scale = max_norm / (norm + 1e-12)
            for g in self.grads.values():
                g *= scale
        return norm

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, arr in self.params.items():
            src = np.asarray(state[name], dtype=np.float64)
            if src.shape != arr.shape:
                raise ShapeError(f"{name}: expected {arr.shape}, got {src.shape}")
            arr[...] = src


@dataclass
class RMSProp:
    lr: float = 7e-4
    decay: float = 0.99
    eps: float = 1e-5
    square_avg: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise DomainError(f"learning rate must be positive, got {self.lr}")

    def step(self, store: ParamStore, names=None) -> None:
        """Apply one RMSProp update from the store's gradients, then zero them.

        ``names`` restricts the update (and the running statistics) to a
        subset of parameters; the others are left untouched.
        """
        names = list(store.params) if names is None else list(names)
        for name in names:
            if not np.all(np.isfinite(store.grads[name])):
                raise NumericError(f"non-finite gradient in {name!r}")
        for name in names:
            p, g = store.params[name], store.grads[name]
            sq = self.square_avg.get(name)
            if sq is None:
                sq = self.square_avg[name] = np.zeros_like(p)
            tmp = g * g
            tmp *= 1.0 - self.decay
            sq *= self.decay
            sq += tmp
            np.sqrt(sq, out=tmp)
            tmp += self.eps
            np.divide(g, tmp, out=tmp)
            tmp *= self.lr
            p -= tmp
            g.fill(0.0)


def grad_check(
    loss_fn: Callable[[ParamStore], float],
    store: ParamStore,
    eps: float = 1e-5,
    max_coords: int = 40,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients against central differences.

    ``loss_fn(store)`` must return the loss and accumulate its analytic
    gradient into ``store.grads``. Up to ``max_coords`` coordinates per
    parameter are sampled; the return value is the largest
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)`` seen.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    store.zero_grad()
    base = loss_fn(store)
    if not np.isfinite(base):
        raise NumericError(f"non-finite loss {base}")
    analytic = {k: g.copy() for k, g in store.grads.items()}

    worst = 0.0
    for name, p in store.params.items():
        flat = p.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= max_coords else rng.choice(n, max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn(store)
            flat[i] = orig - eps
            down = loss_fn(store)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss while perturbing {name}[{i}]")
            numeric = (up - down) / (2 * eps)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    store.zero_grad()
    for k, g in analytic.items():
        store.grads[k][...] = g
    return worst


def save_arrays(path, tag: str, arrays: dict[str, np.ndarray]) -> None:
    """Write a named-array ``.npz`` container stamped with a format tag."""
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload["__format__"] = np.array(tag)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_arrays(path, tag: str) -> dict[str, np.ndarray]:
    with np.load(path, allow_pickle=False) as data:
        found = str(data["__format__"]) if "__format__" in data else None
        if found != tag:
            raise ValueError(f"{path}: expected format {tag!r}, found {found!r}")
        return {k: data[k] for k in data.files if k != "__format__"}
