"""Dense Q-network with hand-written gradients, Adam, and binary checkpoints."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("none", "leaky_relu", "prelu", "elu")
LEAKY_SLOPE = 0.01
ELU_ALPHA = 1.0
PRELU_INIT = 0.25

CHECKPOINT_MAGIC = b"BKDQNCKP"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class MLPSpec:
    input_dim: int
    output_dim: int
    hidden: tuple[int, ...] = (1024, 512)
    output_activation: str = "none"
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim <= 0 or self.output_dim <= 0 or any(h <= 0 for h in self.hidden):
            raise ValueError(f"layer sizes must be positive: {self}")
        if self.output_activation not in ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {ACTIVATIONS}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.output_dim]

    def param_names(self) -> list[str]:
        names = []
        for i in range(len(self.sizes) - 1):
            names += [f"W{i}", f"b{i}"]
        if self.output_activation == "prelu":
            names.append("prelu")
        return names


def init_params(spec: MLPSpec, seed: int) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    rng = np.random.default_rng(seed)
    params = {}
    sizes = spec.sizes
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        params[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(spec.dtype)
        params[f"b{i}"] = rng.uniform(-bound, bound, size=fan_out).astype(spec.dtype)
    if spec.output_activation == "prelu":
        params["prelu"] = np.full(1, PRELU_INIT, dtype=spec.dtype)
    return params


def copy_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in params.items()}


def _out_act(spec, params, z):
    act = spec.output_activation
    if act == "none":
        return z
    if act == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if act == "prelu":
        return np.where(z > 0, z, params["prelu"][0] * z)
    return np.where(z > 0, z, ELU_ALPHA * np.expm1(np.minimum(z, 0.0)))


def _forward_cache(spec, params, x):
    n_layers = len(spec.sizes) - 1
    acts = [x]
    h = x
    for i in range(n_layers - 1):
        h = h @ params[f"W{i}"] + params[f"b{i}"]
        np.maximum(h, 0.0, out=h)
        acts.append(h)
    z = h @ params[f"W{n_layers - 1}"] + params[f"b{n_layers - 1}"]
    return acts, z


def forward(spec: MLPSpec, params: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
    """Q-values for a batch of observations, shape (batch, output_dim)."""
    x = np.asarray(x, dtype=spec.dtype)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != spec.input_dim:
        raise ValueError(f"input width {x.shape[1]} != input_dim {spec.input_dim}")
    _, z = _forward_cache(spec, params, x)
    return _out_act(spec, params, z)


def backward(
    spec: MLPSpec,
    params: dict[str, np.ndarray],
    x: np.ndarray,
    actions: np.ndarray,
    targets: np.ndarray,
    return_q: bool = False,
):
    """Gradients of mean((targets - Q(x)[actions])**2) with respect to every parameter.

    Returns ``(grads, loss)``, or ``(grads, loss, q_selected)`` when ``return_q``.
    """
    x = np.asarray(x, dtype=spec.dtype)
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=spec.dtype)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"batch shape {x.shape} incompatible with input_dim {spec.input_dim}")
    batch = x.shape[0]
    if actions.shape != (batch,) or targets.shape != (batch,):
        raise ValueError("actions and targets need one entry per batch row")
    acts, z = _forward_cache(spec, params, x)
    rows = np.arange(batch)
    z_sel = z[rows, actions]
    q_sel = _out_act(spec, params, z_sel)
    err = q_sel - targets
    loss = float(np.mean(err * err))

    grads: dict[str, np.ndarray] = {}
    dq = (2.0 / batch) * err
    act = spec.output_activation
    neg = z_sel <= 0
    if act == "none":
        dz_sel = dq
    elif act == "leaky_relu":
        dz_sel = np.where(neg, LEAKY_SLOPE * dq, dq)
    elif act == "prelu":
        a = params["prelu"][0]
        dz_sel = np.where(neg, a * dq, dq)
        grads["prelu"] = np.array([np.sum(np.where(neg, z_sel, 0.0) * dq)], dtype=spec.dtype)
    else:
        dz_sel = np.where(neg, ELU_ALPHA * np.exp(np.minimum(z_sel, 0.0)) * dq, dq)
    delta = np.zeros_like(z)
    delta[rows, actions] = dz_sel

    n_layers = len(spec.sizes) - 1
    for i in range(n_layers - 1, -1, -1):
        h = acts[i]
        grads[f"W{i}"] = h.T @ delta
        grads[f"b{i}"] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ params[f"W{i}"].T
            delta *= acts[i] > 0
    if return_q:
        return grads, loss, q_sel
    return grads, loss


@dataclass
class Adam:
    lr: float = 2.5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
                raise FloatingPointError(
                    f"non-finite gradient for {name} at step {self.step_count + 1}: {bad} bad entries"
                )
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def optimizer_step(params, grads, opt: Adam):
    """Functional wrapper: returns updated copies of the parameters and optimizer."""
    new_params = copy_params(params)
    new_opt = Adam(
        opt.lr, opt.beta1, opt.beta2, opt.eps, opt.step_count,
        copy_params(opt.m), copy_params(opt.v),
    )
    new_opt.step(new_params, grads)
    return new_params, new_opt


def save_checkpoint(
    path: str | Path,
    spec: MLPSpec,
    params: dict[str, np.ndarray],
    opt: Adam | None = None,
    metadata: dict | None = None,
) -> None:
    """Layout: magic, u32 version, u32 header length, JSON header, float tensors
    (row-major, little-endian, in header order), 32-byte SHA-256 of all preceding bytes."""
    names = spec.param_names()
    tensors = [("param", n, params[n]) for n in names]
    if opt is not None:
        tensors += [("adam_m", n, opt.m[n]) for n in names if n in opt.m]
        tensors += [("adam_v", n, opt.v[n]) for n in names if n in opt.v]
    header = {
        "spec": asdict(spec),
        "optimizer": None
        if opt is None
        else {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "step": opt.step_count},
        "tensors": [{"group": g, "name": n, "shape": list(a.shape)} for g, n, a in tensors],
        "metadata": metadata or {},
    }
    head = json.dumps(header, sort_keys=True).encode()
    dt = np.dtype(spec.dtype).newbyteorder("<")
    body = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(head)), head]
    body += [np.ascontiguousarray(a, dtype=dt).tobytes() for _, _, a in tensors]
    blob = b"".join(body)
    Path(path).write_bytes(blob + hashlib.sha256(blob).digest())


@dataclass
class Checkpoint:
    spec: MLPSpec
    params: dict[str, np.ndarray]
    optimizer: Adam | None
    metadata: dict


def load_checkpoint(path: str | Path, expect_input_dim: int | None = None, expect_output_dim: int | None = None) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < len(CHECKPOINT_MAGIC) + 8 + 32 or not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt file)")
    pos = len(CHECKPOINT_MAGIC)
    version, head_len = struct.unpack_from("<II", payload, pos)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos += 8
    header = json.loads(payload[pos : pos + head_len])
    pos += head_len
    spec = MLPSpec(**header["spec"])
    if expect_input_dim is not None and spec.input_dim != expect_input_dim:
        raise CheckpointError(f"{path}: checkpoint input_dim {spec.input_dim} != expected {expect_input_dim}")
    if expect_output_dim is not None and spec.output_dim != expect_output_dim:
        raise CheckpointError(f"{path}: checkpoint output_dim {spec.output_dim} != expected {expect_output_dim}")
    dt = np.dtype(spec.dtype).newbyteorder("<")
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        nbytes = count * dt.itemsize
        arr = np.frombuffer(payload, dtype=dt, count=count, offset=pos).reshape(t["shape"])
        groups[t["group"]][t["name"]] = arr.astype(spec.dtype)
        pos += nbytes
    if pos != len(payload):
        raise CheckpointError(f"{path}: trailing bytes after tensors")
    missing = set(spec.param_names()) - set(groups["param"])
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    opt = None
    if header["optimizer"] is not None:
        o = header["optimizer"]
        opt = Adam(o["lr"], o["beta1"], o["beta2"], o["eps"], o["step"], groups["adam_m"], groups["adam_v"])
    return Checkpoint(spec, groups["param"], opt, header["metadata"])
