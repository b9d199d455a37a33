"""Small convolutional classifiers sized for single-core experiments.

An architecture is a plain dict so it can be serialized next to the weights:
input shape, class count, and a layer list drawn from conv / relu / avgpool /
flatten / dense. No normalization layers anywhere: model outputs depend only
on the example itself, never on batch composition, which keeps attack and
evaluation results independent of batching.

Parameters are He-initialized from a seed (fan-in scaled normals for weights,
zeros for biases), so a (preset, seed) pair pins the starting point exactly.

Checkpoints are a binary container: magic, format version, the architecture
as JSON, then each parameter as little-endian float32 with its shape header.
Saving and loading a float32 model round-trips bit-exactly.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T

CHECKPOINT_MAGIC = b"PHFORGE\x00"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint bytes are malformed or from an unknown format version."""


@dataclass
class Model:
    arch: dict
    params: dict  # name -> Tensor, insertion order fixed by the layer list

    def parameters(self):
        return list(self.params.values())

    def __call__(self, x):
        return forward(self, x)


def preset(name, input_shape=(3, 32, 32)):
    """Architecture dict for a named preset.

    linear-k2      flatten + dense head, two classes; its attack behavior
                   has a closed form, which the attack tests exploit
    smallcnn-k4    two conv blocks, four classes, ~14k parameters; the first
                   conv strides by 2 so inner attack loops stay cheap
    smallcnn-k10   three conv blocks, ten classes, ~62k parameters
    """
    c, h, w = input_shape
    conv = lambda f: {"op": "conv", "out_channels": f, "kernel": 3, "stride": 1, "padding": 1}
    if name == "linear-k2":
        layers = [{"op": "flatten"}, {"op": "dense", "out_features": 2}]
        classes = 2
    elif name == "smallcnn-k4":
        layers = [
            {"op": "conv", "out_channels": 24, "kernel": 3, "stride": 2, "padding": 1},
            {"op": "relu"}, {"op": "avgpool", "k": 2},
            conv(48), {"op": "relu"}, {"op": "avgpool", "k": 2},
            {"op": "flatten"}, {"op": "dense", "out_features": 4},
        ]
        classes = 4
    elif name == "smallcnn-k10":
        layers = [
            conv(24), {"op": "relu"}, {"op": "avgpool", "k": 2},
            conv(64), {"op": "relu"}, {"op": "avgpool", "k": 2},
            conv(64), {"op": "relu"}, {"op": "avgpool", "k": 2},
            {"op": "flatten"}, {"op": "dense", "out_features": 10},
        ]
        classes = 10
    else:
        raise ValueError(
            f"unknown preset {name!r}; choose linear-k2, smallcnn-k4, smallcnn-k10"
        )
    return {
        "name": name,
        "input_shape": list(input_shape),
        "classes": classes,
        "layers": layers,
    }


def _walk_shapes(arch):
    """Yield (index, layer, in_shape) while validating the chain."""
    c, h, w = arch["input_shape"]
    for i, layer in enumerate(arch["layers"]):
        yield i, layer, (c, h, w)
        op = layer["op"]
        if op == "conv":
            k, s, p = layer["kernel"], layer["stride"], layer["padding"]
            h = (h + 2 * p - k) // s + 1
            w = (w + 2 * p - k) // s + 1
            if h < 1 or w < 1:
                raise ValueError(f"layer {i}: conv collapses spatial dims to {h}x{w}")
            c = layer["out_channels"]
        elif op == "avgpool":
            k = layer["k"]
            if h % k or w % k:
                raise ValueError(f"layer {i}: avgpool {k} does not tile {h}x{w}")
            h, w = h // k, w // k
        elif op == "flatten":
            c, h, w = c * h * w, 1, 1
        elif op == "dense":
            if h != 1 or w != 1:
                raise ValueError(f"layer {i}: dense requires flattened input")
            c = layer["out_features"]
        elif op != "relu":
            raise ValueError(f"layer {i}: unknown op {op!r}")
    if (c, h, w) != (arch["classes"], 1, 1):
        raise ValueError(
            f"architecture emits {c} features but declares {arch['classes']} classes"
        )


def build(arch, seed, dtype=np.float32):
    """Instantiate parameters for `arch` from `seed`."""
    rng = np.random.default_rng(seed)
    params = {}
    for i, layer, (c, h, w) in _walk_shapes(arch):
        op = layer["op"]
        if op == "conv":
            f, k = layer["out_channels"], layer["kernel"]
            fan_in = c * k * k
            wdata = rng.standard_normal((f, c, k, k)) * np.sqrt(2.0 / fan_in)
            params[f"conv{i}.w"] = T.Tensor(wdata, requires_grad=True, dtype=dtype)
            params[f"conv{i}.b"] = T.Tensor(
                np.zeros(f), requires_grad=True, dtype=dtype
            )
        elif op == "dense":
            n_in, n_out = c, layer["out_features"]
            wdata = rng.standard_normal((n_in, n_out)) * np.sqrt(2.0 / n_in)
            params[f"dense{i}.w"] = T.Tensor(wdata, requires_grad=True, dtype=dtype)
            params[f"dense{i}.b"] = T.Tensor(
                np.zeros(n_out), requires_grad=True, dtype=dtype
            )
    return Model(arch=arch, params=params)


def build_preset(name, seed, input_shape=(3, 32, 32)):
    return build(preset(name, input_shape), seed)


def forward(model, x):
    """Logits for a (B, C, H, W) batch; returns a (B, classes) Tensor."""
    if not isinstance(x, T.Tensor):
        x = T.Tensor(x)
    expect = tuple(model.arch["input_shape"])
    if x.data.ndim != 4 or tuple(x.data.shape[1:]) != expect:
        raise T.ShapeError(
            f"model expects (B, {expect[0]}, {expect[1]}, {expect[2]}), "
            f"got {x.data.shape}"
        )
    out = x
    for i, layer in enumerate(model.arch["layers"]):
        op = layer["op"]
        if op == "conv":
            out = T.conv2d(
                out,
                model.params[f"conv{i}.w"],
                model.params[f"conv{i}.b"],
                stride=layer["stride"],
                padding=layer["padding"],
            )
        elif op == "relu":
            out = T.relu(out)
        elif op == "avgpool":
            out = T.avgpool2d(out, layer["k"])
        elif op == "flatten":
            out = T.flatten(out)
        elif op == "dense":
            out = T.add(
                T.matmul(out, model.params[f"dense{i}.w"]),
                model.params[f"dense{i}.b"],
            )
    return out


def predict(model, images, batch_size=512):
    """Argmax labels without recording a graph."""
    images = np.asarray(images)
    out = np.empty(images.shape[0], dtype=np.int64)
    with T.no_grad():
        for lo in range(0, images.shape[0], batch_size):
            logits = forward(model, images[lo : lo + batch_size])
            out[lo : lo + batch_size] = np.argmax(logits.data, axis=1)
    return out


def param_count(model):
    return int(sum(p.data.size for p in model.parameters()))


# -- checkpoint container --------------------------------------------------


def checkpoint_bytes(model) -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    arch_json = json.dumps(model.arch, sort_keys=True, separators=(",", ":")).encode()
    buf.write(struct.pack("<I", len(arch_json)))
    buf.write(arch_json)
    buf.write(struct.pack("<I", len(model.params)))
    for name, p in model.params.items():
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        buf.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<I", d))
        buf.write(arr.tobytes())
    return buf.getvalue()


def save_checkpoint(model, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint_bytes(data: bytes) -> Model:
    fh = io.BytesIO(data)
    if _read_exact(fh, len(CHECKPOINT_MAGIC), "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (alen,) = struct.unpack("<I", _read_exact(fh, 4, "arch length"))
    try:
        arch = json.loads(_read_exact(fh, alen, "architecture"))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"architecture block is not valid JSON: {e}") from None
    (n_params,) = struct.unpack("<I", _read_exact(fh, 4, "parameter count"))
    params = {}
    for _ in range(n_params):
        (nlen,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
        name = _read_exact(fh, nlen, "name").decode()
        (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
        shape = tuple(
            struct.unpack("<I", _read_exact(fh, 4, "dimension"))[0]
            for _ in range(ndim)
        )
        count = int(np.prod(shape)) if shape else 1
        raw = _read_exact(fh, 4 * count, f"data of {name}")
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        params[name] = T.Tensor(arr, requires_grad=True)
    if fh.read(1):
        raise CheckpointError("trailing bytes after last parameter")
    return Model(arch=arch, params=params)


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        return load_checkpoint_bytes(fh.read())
