"""A small numpy neural-network kernel: layers, Huber loss, Adam, checkpoints.

Only what the two Q networks need: dense and strided 2D convolution layers,
ReLU, nearest-neighbour upsampling, a masked Huber regression loss, an Adam
optimizer and central finite differences to verify the backward pass.

Checkpoint layout (all integers little-endian)::

    magic      8 bytes   b"FGCKPT\\r\\n"
    version    uint32    currently 1
    hdr_len    uint32    length of the JSON header in bytes
    header     JSON      {"networks": [{"name", "dtype", "spec", "shapes"}], "meta": {...}}
    payload    raw       every parameter array in order, little-endian, C order
    crc32      uint32    zlib.crc32 of all preceding bytes
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

MAGIC = b"FGCKPT\r\n"
VERSION = 1
HUBER_DELTA = 1.0


class ShapeError(ValueError):
    pass


class DivergedError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# layers


class Dense:
    def __init__(self, n_in: int, n_out: int):
        self.n_in, self.n_out = n_in, n_out
        self.params = [np.zeros((n_in, n_out)), np.zeros(n_out)]
        self.grads = [np.zeros_like(p) for p in self.params]

    @property
    def fan_in(self) -> int:
        return self.n_in

    def forward(self, x, cache=True):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"dense expects (N, {self.n_in}), got {x.shape}")
        if cache:
            self._x = x
        return x @ self.params[0] + self.params[1]

    def backward(self, dout):
        self.grads[0] += self._x.T @ dout
        self.grads[1] += dout.sum(axis=0)
        return dout @ self.params[0].T


class Conv2d:
    """2D convolution.  Activations flow channels-last (N, H, W, C) internally;
    :class:`Network` converts from and to the public (N, C, H, W) layout."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1, pad: int = 0):
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.pad = kernel, stride, pad
        self.params = [np.zeros((out_ch, in_ch, kernel, kernel)), np.zeros(out_ch)]
        self.grads = [np.zeros_like(p) for p in self.params]

    @property
    def fan_in(self) -> int:
        return self.in_ch * self.kernel * self.kernel

    def _wmat(self):
        k = self.kernel
        return self.params[0].transpose(2, 3, 1, 0).reshape(k * k * self.in_ch, self.out_ch)

    def forward(self, x, cache=True):
        if x.ndim != 4 or x.shape[3] != self.in_ch:
            raise ShapeError(f"conv expects {self.in_ch} input channels, got shape {x.shape}")
        k, s, p = self.kernel, self.stride, self.pad
        if p:
            x = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        n, hp, wp, _ = x.shape
        ho, wo = (hp - k) // s + 1, (wp - k) // s + 1
        if ho < 1 or wo < 1:
            raise ShapeError("input smaller than the convolution kernel")
        if k == 1 and s == 1:
            cols = x.reshape(n * ho * wo, self.in_ch)
        else:
            cols = np.concatenate(
                [x[:, i:i + s * ho:s, j:j + s * wo:s, :] for i in range(k) for j in range(k)], axis=3
            ).reshape(n * ho * wo, k * k * self.in_ch)
        out = cols @ self._wmat() + self.params[1]
        if cache:
            self._cache = (cols, n, ho, wo, x.shape)
        return out.reshape(n, ho, wo, self.out_ch)

    def backward(self, dout):
        cols, n, ho, wo, padded = self._cache
        k, s, p, c = self.kernel, self.stride, self.pad, self.in_ch
        dmat = dout.reshape(n * ho * wo, self.out_ch)
        dw = cols.T @ dmat
        self.grads[0] += dw.reshape(k, k, c, self.out_ch).transpose(3, 2, 0, 1)
        self.grads[1] += dmat.sum(axis=0)
        dcols = (dmat @ self._wmat().T).reshape(n, ho, wo, k * k * c)
        dx = np.zeros(padded, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                q = (i * k + j) * c
                dx[:, i:i + s * ho:s, j:j + s * wo:s, :] += dcols[..., q:q + c]
        if p:
            dx = dx[:, p:-p, p:-p, :]
        return dx


class ReLU:
    params: list = []
    grads: list = []

    def forward(self, x, cache=True):
        if cache:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dout):
        return dout * self._mask


class Upsample:
    params: list = []
    grads: list = []

    def __init__(self, factor: int):
        self.factor = factor

    def forward(self, x, cache=True):
        f = self.factor
        return x.repeat(f, axis=1).repeat(f, axis=2)

    def backward(self, dout):
        f = self.factor
        n, h, w, c = dout.shape
        return dout.reshape(n, h // f, f, w // f, f, c).sum(axis=(2, 4))


def build_layer(desc: Mapping):
    kind = desc["type"]
    if kind == "dense":
        return Dense(desc["in"], desc["out"])
    if kind == "conv":
        return Conv2d(desc["in_ch"], desc["out_ch"], desc["kernel"], desc.get("stride", 1), desc.get("pad", 0))
    if kind == "relu":
        return ReLU()
    if kind == "upsample":
        return Upsample(desc["factor"])
    raise ShapeError(f"unknown layer type {kind!r}")


def fcn_spec(in_ch: int = 2, n_out: int = 3) -> list[dict]:
    return [
        {"type": "conv", "in_ch": in_ch, "out_ch": 16, "kernel": 3, "stride": 1, "pad": 1},
        {"type": "relu"},
        {"type": "conv", "in_ch": 16, "out_ch": 32, "kernel": 3, "stride": 2, "pad": 1},
        {"type": "relu"},
        {"type": "conv", "in_ch": 32, "out_ch": 32, "kernel": 3, "stride": 1, "pad": 1},
        {"type": "relu"},
        {"type": "upsample", "factor": 2},
        {"type": "conv", "in_ch": 32, "out_ch": n_out, "kernel": 1, "stride": 1, "pad": 0},
    ]


def mlp_spec(n_in: int = 5, hidden: int = 64, n_out: int = 12) -> list[dict]:
    return [
        {"type": "dense", "in": n_in, "out": hidden},
        {"type": "relu"},
        {"type": "dense", "in": hidden, "out": hidden},
        {"type": "relu"},
        {"type": "dense", "in": hidden, "out": n_out},
    ]


def validate_spec(spec: list[Mapping]) -> None:
    """Check that adjacent layers agree on channel/feature counts."""
    width = None
    for idx, desc in enumerate(spec):
        kind = desc["type"]
        if kind == "dense":
            n_in, n_out = desc["in"], desc["out"]
        elif kind == "conv":
            n_in, n_out = desc["in_ch"], desc["out_ch"]
        else:
            continue
        if width is not None and n_in != width:
            raise ShapeError(f"layer {idx} expects {n_in} inputs but receives {width}")
        width = n_out


def _execution_order(spec: list[Mapping]) -> list[int]:
    """Layer order used at run time.

    A 1x1 stride-1 convolution commutes with nearest-neighbour upsampling, so
    such pairs run convolution first, at the lower resolution.  The result is
    identical; only the work shrinks.
    """
    order = list(range(len(spec)))
    for k in range(len(order) - 1):
        a, b = spec[order[k]], spec[order[k + 1]]
        if (a["type"] == "upsample" and b["type"] == "conv" and b["kernel"] == 1
                and b.get("stride", 1) == 1 and b.get("pad", 0) == 0):
            order[k], order[k + 1] = order[k + 1], order[k]
    return order


class Network:
    """Sequential stack of layers built from a JSON-able spec."""

    def __init__(self, spec: list[Mapping], seed: int = 0, dtype=np.float32, init: str = "uniform"):
        validate_spec(spec)
        self.spec = [dict(d) for d in spec]
        self.dtype = np.dtype(dtype)
        self.layers = [build_layer(d) for d in self.spec]
        self._order = _execution_order(self.spec)
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            if not layer.params:
                continue
            bound = 1.0 / np.sqrt(layer.fan_in)
            for idx, p in enumerate(layer.params):
                if init == "uniform":
                    p[...] = rng.uniform(-bound, bound, size=p.shape)
                elif init != "zeros":
                    raise ValueError(f"unknown init {init!r}")
            layer.params[:] = [p.astype(self.dtype) for p in layer.params]
            layer.grads[:] = [np.zeros_like(p) for p in layer.params]

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def gradients(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads]

    def zero_grad(self) -> None:
        for g in self.gradients():
            g[...] = 0

    @property
    def spatial(self) -> bool:
        return self.spec[0]["type"] == "conv"

    def forward(self, x, cache: bool = False) -> np.ndarray:
        """Run the stack; image tensors are (N, C, H, W) on both ends."""
        x = np.asarray(x, dtype=self.dtype)
        if self.spatial:
            if x.ndim != 4:
                raise ShapeError(f"expected (N, C, H, W) input, got {x.shape}")
            x = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
        for idx in self._order:
            x = self.layers[idx].forward(x, cache=cache)
        if self.spatial:
            x = x.transpose(0, 3, 1, 2)
        return x

    __call__ = forward

    def backward(self, dout) -> np.ndarray:
        dout = np.asarray(dout, dtype=self.dtype)
        if self.spatial:
            dout = np.ascontiguousarray(dout.transpose(0, 2, 3, 1))
        for idx in reversed(self._order):
            dout = self.layers[idx].backward(dout)
        if self.spatial:
            dout = dout.transpose(0, 3, 1, 2)
        return dout

    def copy_from(self, other: "Network") -> None:
        for dst, src in zip(self.parameters(), other.parameters()):
            dst[...] = src

    def clone(self) -> "Network":
        net = Network(self.spec, dtype=self.dtype, init="zeros")
        net.copy_from(self)
        return net


# ---------------------------------------------------------------------------
# loss and optimisation


def huber_masked(pred, target, mask, delta: float = HUBER_DELTA):
    """Mean Huber loss over masked entries and its gradient w.r.t. ``pred``."""
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("loss mask selects no entries")
    diff = np.where(mask, pred - target, 0.0)
    absd = np.abs(diff)
    quad = np.minimum(absd, delta)
    loss = float(np.sum(0.5 * quad * quad + delta * (absd - quad))) / count
    grad = np.clip(diff, -delta, delta) / count
    return loss, grad.astype(pred.dtype)


@dataclass
class Adam:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def train_step(net: Network, inputs, target_q, mask, optimizer: Adam) -> float:
    """One masked-Huber regression update; returns the pre-update loss."""
    target_q = np.asarray(target_q)
    if not np.all(np.isfinite(target_q[np.asarray(mask, dtype=bool)])):
        raise DivergedError("diverged")
    net.zero_grad()
    pred = net.forward(inputs, cache=True)
    loss, grad = huber_masked(pred, target_q.astype(pred.dtype), mask)
    net.backward(grad)
    grads = net.gradients()
    if not all(np.all(np.isfinite(g)) for g in grads) or not np.isfinite(loss):
        raise DivergedError("diverged")
    optimizer.step(net.parameters(), grads)
    return loss


def grad_check(net: Network, inputs, target, mask, h: float = 1e-5,
               floor: float = 1e-6, loss_fn: Callable | None = None) -> float:
    """Max relative error between backprop and central differences.

    Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor)
    over every scalar parameter; ``floor`` keeps vanishing gradients from
    dividing round-off by zero.
    """
    if net.dtype != np.float64:
        raise ValueError("gradient checks need a float64 network")
    loss_fn = loss_fn or huber_masked
    net.zero_grad()
    pred = net.forward(inputs, cache=True)
    _, grad = loss_fn(pred, target, mask)
    net.backward(grad)
    analytic = [g.copy() for g in net.gradients()]
    worst = 0.0
    for p, a in zip(net.parameters(), analytic):
        flat, aflat = p.reshape(-1), a.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            lp, _ = loss_fn(net.forward(inputs), target, mask)
            flat[idx] = orig - h
            lm, _ = loss_fn(net.forward(inputs), target, mask)
            flat[idx] = orig
            num = (lp - lm) / (2 * h)
            err = abs(aflat[idx] - num) / max(abs(aflat[idx]), abs(num), floor)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    nets: dict[str, Network]
    meta: dict

    @property
    def net(self) -> Network:
        if len(self.nets) != 1:
            raise CheckpointError("checkpoint holds several networks; index .nets by name")
        return next(iter(self.nets.values()))


def save(nets, path, meta: dict | None = None) -> None:
    if isinstance(nets, Network):
        nets = {"net": nets}
    header = {"networks": [], "meta": meta or {}}
    payload = bytearray()
    for name, net in nets.items():
        params = net.parameters()
        header["networks"].append({
            "name": name,
            "dtype": net.dtype.newbyteorder("<").str,
            "spec": net.spec,
            "shapes": [list(p.shape) for p in params],
        })
        for p in params:
            payload += np.ascontiguousarray(p, dtype=net.dtype.newbyteorder("<")).tobytes()
    hdr = json.dumps(header, sort_keys=True).encode()
    body = MAGIC + struct.pack("<II", VERSION, len(hdr)) + hdr + bytes(payload)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load(path, expected: Mapping[str, list] | None = None) -> Checkpoint:
    """Read a checkpoint; ``expected`` maps network names to required specs."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 12 or not data.startswith(MAGIC):
        raise CheckpointError("bad checkpoint: wrong magic bytes")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("bad checkpoint: checksum mismatch (corrupt file)")
    version, hdr_len = struct.unpack("<II", body[len(MAGIC):len(MAGIC) + 8])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = len(MAGIC) + 8
    header = json.loads(body[start:start + hdr_len])
    offset = start + hdr_len
    nets = {}
    for entry in header["networks"]:
        name, spec = entry["name"], entry["spec"]
        if expected is not None and name in expected:
            _compare_specs(name, spec, expected[name])
        dtype = np.dtype(entry["dtype"])
        net = Network(spec, dtype=dtype.newbyteorder("="), init="zeros")
        for p, shape in zip(net.parameters(), entry["shapes"]):
            if list(p.shape) != shape:
                raise CheckpointError(f"network {name!r}: parameter shape {shape} does not match spec")
            nbytes = int(np.prod(shape)) * dtype.itemsize
            p[...] = np.frombuffer(body, dtype=dtype, count=int(np.prod(shape)), offset=offset).reshape(shape)
            offset += nbytes
        nets[name] = net
    if expected is not None:
        missing = set(expected) - set(nets)
        if missing:
            raise CheckpointError(f"checkpoint lacks networks: {sorted(missing)}")
    return Checkpoint(nets, header.get("meta", {}))


def _compare_specs(name: str, got: list, want: list) -> None:
    bad = []
    for idx in range(max(len(got), len(want))):
        g = got[idx] if idx < len(got) else None
        w = dict(want[idx]) if idx < len(want) else None
        if g != w:
            bad.append(f"layer {idx}: checkpoint {g} != expected {w}")
    if bad:
        raise CheckpointError(f"network {name!r} spec mismatch; " + "; ".join(bad))
