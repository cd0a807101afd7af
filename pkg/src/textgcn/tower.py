"""Trainable projection head: per-side MLPs, manual backprop, Adam, checkpoints.

Each MLP is two linear layers with a LeakyReLU (slope 0.01) in between;
the hidden width defaults to half the input width. The head runs either
with separate user/item networks ("two" mode) or a single shared network
("one" mode) where both sides literally alias the same tensors, so
gradient contributions from the two branches accumulate by summation.

Forward/backward are written out by hand in float32; correctness is
guarded by finite-difference tests rather than an autograd framework.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import embeddings
from .errors import DataError

LEAKY_SLOPE = 0.01
CHECKPOINT_MANIFEST = "manifest.json"
TENSOR_NAMES = ("w1", "b1", "w2", "b2")


@dataclass
class MlpParams:
    """Weights of one two-layer MLP: y = w2 @ leaky(w1 @ x + b1) + b2."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        self.w1 = np.ascontiguousarray(self.w1, dtype=np.float32)
        self.b1 = np.ascontiguousarray(self.b1, dtype=np.float32)
        self.w2 = np.ascontiguousarray(self.w2, dtype=np.float32)
        self.b2 = np.ascontiguousarray(self.b2, dtype=np.float32)
        d_hidden, d_in = self.w1.shape
        d_out = self.w2.shape[0]
        if self.b1.shape != (d_hidden,) or self.w2.shape != (d_out, d_hidden) \
                or self.b2.shape != (d_out,):
            raise DataError("inconsistent MLP tensor shapes")
        for name in TENSOR_NAMES:
            if not np.isfinite(getattr(self, name)).all():
                raise DataError(f"non-finite value in tensor {name}")

    @property
    def d_in(self) -> int:
        return self.w1.shape[1]

    @property
    def d_hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def d_out(self) -> int:
        return self.w2.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TENSOR_NAMES}

    def copy(self) -> "MlpParams":
        return MlpParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())


def init_mlp(d_in: int, d_out: int, d_hidden: int | None = None,
             rng: np.random.Generator | None = None) -> MlpParams:
    """Kaiming-uniform fan-in init (LeakyReLU gain); torch-style uniform biases."""
    if d_hidden is None:
        d_hidden = max(1, d_in // 2)
    rng = rng if rng is not None else np.random.default_rng(0)
    gain = math.sqrt(2.0 / (1.0 + LEAKY_SLOPE ** 2))

    def weight(rows: int, cols: int) -> np.ndarray:
        bound = gain * math.sqrt(3.0 / cols)
        return rng.uniform(-bound, bound, size=(rows, cols)).astype(np.float32)

    def bias(rows: int, fan_in: int) -> np.ndarray:
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=rows).astype(np.float32)

    return MlpParams(weight(d_hidden, d_in), bias(d_hidden, d_in),
                     weight(d_out, d_hidden), bias(d_out, d_hidden))


@dataclass
class TwoTowerParams:
    """User and item MLPs; in "one" mode both fields are the same object."""

    user_mlp: MlpParams
    item_mlp: MlpParams

    @property
    def mode(self) -> str:
        return "one" if self.user_mlp is self.item_mlp else "two"

    @classmethod
    def init(cls, d_in: int, d_out: int, d_hidden: int | None = None,
             mode: str = "two", seed: int = 0) -> "TwoTowerParams":
        rng = np.random.default_rng(seed)
        if mode == "one":
            shared = init_mlp(d_in, d_out, d_hidden, rng)
            return cls(shared, shared)
        if mode != "two":
            raise DataError(f"unknown tower mode {mode!r}")
        return cls(init_mlp(d_in, d_out, d_hidden, rng),
                   init_mlp(d_in, d_out, d_hidden, rng))

    def named_tensors(self) -> dict[str, np.ndarray]:
        if self.mode == "one":
            return {f"shared.{k}": v for k, v in self.user_mlp.tensors().items()}
        out = {f"user.{k}": v for k, v in self.user_mlp.tensors().items()}
        out.update({f"item.{k}": v for k, v in self.item_mlp.tensors().items()})
        return out

    def copy(self) -> "TwoTowerParams":
        if self.mode == "one":
            shared = self.user_mlp.copy()
            return TwoTowerParams(shared, shared)
        return TwoTowerParams(self.user_mlp.copy(), self.item_mlp.copy())


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Forward pass; the returned tape feeds mlp_backward."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] != params.d_in:
        raise DataError(f"input shape {x.shape} does not match d_in {params.d_in}")
    hidden_pre = x @ params.w1.T + params.b1
    hidden = np.where(hidden_pre >= 0, hidden_pre, LEAKY_SLOPE * hidden_pre)
    y = hidden @ params.w2.T + params.b2
    return y, (x, hidden_pre, hidden)


def mlp_backward(
    params: MlpParams, tape: tuple, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients of the forward map: (dw1, db1, dw2, db2, dx).

    The LeakyReLU subgradient at exactly zero is taken as 1.
    """
    x, hidden_pre, hidden = tape
    dy = np.ascontiguousarray(dy, dtype=np.float32)
    if dy.shape != (x.shape[0], params.d_out):
        raise DataError(f"upstream gradient shape {dy.shape} does not match tape")
    dw2 = dy.T @ hidden
    db2 = dy.sum(axis=0)
    dhidden = dy @ params.w2
    dpre = dhidden * np.where(hidden_pre >= 0, np.float32(1.0), np.float32(LEAKY_SLOPE))
    dw1 = dpre.T @ x
    db1 = dpre.sum(axis=0)
    dx = dpre @ params.w1
    return dw1, db1, dw2, db2, dx


class AdamState:
    """First/second moments per named tensor, plus the shared step counter."""

    def __init__(self, tensors: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step = 0
        self.m = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in tensors.items()}


def adam_step(tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> None:
    """Standard bias-corrected Adam update, in place, constant learning rate."""
    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    for name, grad in grads.items():
        if not np.isfinite(grad).all():
            raise DataError(f"non-finite gradient for tensor {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(grad)
        m_hat = m / np.float32(bias1)
        v_hat = v / np.float32(bias2)
        tensors[name] -= np.float32(state.lr) * m_hat / (np.sqrt(v_hat) + np.float32(state.eps))


def save_checkpoint(params: TwoTowerParams, adam: AdamState | None,
                    meta: dict, directory: str | Path) -> None:
    """Write tensors (and optimizer moments) bit-exactly plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = params.named_tensors()
    manifest: dict = {
        "format_version": 1,
        "mode": params.mode,
        "d_in": params.user_mlp.d_in,
        "d_hidden": params.user_mlp.d_hidden,
        "d_out": params.user_mlp.d_out,
        "tensors": {},
        "adam": None,
        "meta": meta,
    }
    for name, tensor in tensors.items():
        fname = name + ".tge"
        manifest["tensors"][name] = {"file": fname, "shape": list(tensor.shape)}
        embeddings.save_matrix(tensor.reshape(1, -1) if tensor.ndim == 1 else tensor,
                               directory / fname)
    if adam is not None:
        manifest["adam"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
                            "eps": adam.eps, "step": adam.step}
        for prefix, bank in (("m", adam.m), ("v", adam.v)):
            for name, tensor in bank.items():
                fname = f"adam.{prefix}.{name}.tge"
                embeddings.save_matrix(
                    tensor.reshape(1, -1) if tensor.ndim == 1 else tensor,
                    directory / fname)
    (directory / CHECKPOINT_MANIFEST).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_tensor(directory: Path, fname: str, shape: list[int]) -> np.ndarray:
    tensor = embeddings.load_matrix(directory / fname)
    return tensor.reshape(shape)


def load_checkpoint(
    directory: str | Path, expected_d_in: int | None = None
) -> tuple[TwoTowerParams, AdamState | None, dict]:
    """Restore a checkpoint; one-tower checkpoints alias both sides again."""
    directory = Path(directory)
    manifest = json.loads((directory / CHECKPOINT_MANIFEST).read_text(encoding="utf-8"))
    if manifest.get("format_version") != 1:
        raise DataError(f"unsupported checkpoint version {manifest.get('format_version')}")
    if expected_d_in is not None and manifest["d_in"] != expected_d_in:
        raise DataError(
            f"checkpoint dimension mismatch: d_in {manifest['d_in']} != {expected_d_in}"
        )

    def load_mlp(prefix: str) -> MlpParams:
        tensors = {}
        for short in TENSOR_NAMES:
            entry = manifest["tensors"][f"{prefix}.{short}"]
            tensors[short] = _load_tensor(directory, entry["file"], entry["shape"])
        return MlpParams(**tensors)

    if manifest["mode"] == "one":
        shared = load_mlp("shared")
        params = TwoTowerParams(shared, shared)
    else:
        params = TwoTowerParams(load_mlp("user"), load_mlp("item"))

    adam = None
    if manifest["adam"] is not None:
        spec = manifest["adam"]
        adam = AdamState(params.named_tensors(), lr=spec["lr"], beta1=spec["beta1"],
                         beta2=spec["beta2"], eps=spec["eps"])
        adam.step = int(spec["step"])
        for prefix, bank in (("m", adam.m), ("v", adam.v)):
            for name in bank:
                entry = manifest["tensors"][name]
                bank[name] = _load_tensor(
                    directory, f"adam.{prefix}.{name}.tge", entry["shape"])
    return params, adam, manifest["meta"]
