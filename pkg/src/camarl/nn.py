"""Small neural-net building blocks on top of the autodiff tensors.

Layers expose ``parameters()`` as an ordered list of (name, Tensor) pairs;
that flat naming is also the on-disk checkpoint format (JSON container,
versioned, row-major float64 values — floats survive the round trip
bit-for-bit because json uses repr shortest-round-trip encoding).
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError

CHECKPOINT_FORMAT = "camarl-params"
CHECKPOINT_VERSION = 1

LEAKY_SLOPE = 0.01


def _init_weight(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    """Affine layer, weights U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 name: str = "linear", bias: bool = True):
        self.name = name
        self.w = Tensor(_init_weight(rng, in_dim, (in_dim, out_dim)), requires_grad=True)
        self.b = Tensor(_init_weight(rng, in_dim, (out_dim,)), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ad.matmul(x, self.w)
        if self.b is not None:
            out = ad.add(out, self.b)
        return out

    def parameters(self):
        params = [(f"{self.name}.w", self.w)]
        if self.b is not None:
            params.append((f"{self.name}.b", self.b))
        return params


class MLP:
    """Stack of Linear layers with leaky-relu between them (not after the last)."""

    def __init__(self, dims, rng, name="mlp", slope=LEAKY_SLOPE):
        if len(dims) < 2:
            raise ContractError("MLP needs at least input and output dims")
        self.slope = slope
        self.layers = [Linear(dims[i], dims[i + 1], rng, name=f"{name}.{i}")
                       for i in range(len(dims) - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.leaky_relu(x, self.slope)
        return x

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


class Adam:
    """Adam over an ordered (name, Tensor) parameter list."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [t for _, t in params]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(t.data) for t in self.params]
        self.v = [np.zeros_like(t.data) for t in self.params]

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (self.m[i] / b1t) / (np.sqrt(self.v[i] / b2t) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all grads so their joint L2 norm is at most ``max_norm``."""
    tensors = [t for _, t in params]
    total = 0.0
    for t in tensors:
        if t.grad is not None:
            total += float((t.grad * t.grad).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for t in tensors:
            if t.grad is not None:
                t.grad *= factor
    return norm


def soft_update(target_params, online_params, tau: float):
    """Polyak averaging: target <- (1 - tau) * target + tau * online."""
    for (tn, tt), (on, ot) in zip(target_params, online_params):
        if tn != on or tt.data.shape != ot.data.shape:
            raise ContractError(f"parameter mismatch in soft_update: {tn} vs {on}")
        tt.data *= (1.0 - tau)
        tt.data += tau * ot.data


def copy_params(dst_params, src_params):
    for (dn, dt), (sn, st) in zip(dst_params, src_params):
        if dn != sn or dt.data.shape != st.data.shape:
            raise ContractError(f"parameter mismatch in copy_params: {dn} vs {sn}")
        dt.data[...] = st.data


# ---------------------------------------------------------------------------
# checkpoint container

def params_to_dict(params) -> dict:
    entries = []
    for name, t in params:
        entries.append({
            "name": name,
            "shape": list(t.data.shape),
            "data": t.data.reshape(-1).tolist(),
        })
    return {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "params": entries}


def save_params(path: str, params, extra: dict | None = None):
    payload = params_to_dict(params)
    if extra:
        payload["extra"] = extra
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def load_params(path: str) -> tuple[dict, dict]:
    """Return ({name: float64 array}, extra-metadata dict)."""
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ContractError(f"not a parameter checkpoint: {path}")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"unsupported checkpoint version {payload.get('version')}")
    out = {}
    for entry in payload["params"]:
        arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        out[entry["name"]] = arr
    return out, payload.get("extra", {})


def restore_params(params, loaded: dict):
    """Write checkpoint arrays back into live tensors by name."""
    for name, t in params:
        if name not in loaded:
            raise ContractError(f"checkpoint missing parameter {name}")
        arr = loaded[name]
        if tuple(arr.shape) != tuple(t.data.shape):
            raise DimensionError(
                f"checkpoint shape {arr.shape} does not match {t.data.shape} for {name}")
        t.data[...] = arr
