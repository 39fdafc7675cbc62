"""The 3x3-kernel spectrogram classifier, its activations, and checkpoints.

Default topology (6 weight-bearing layers)::

    standardize -> [conv3x3 -> relu -> maxpool2x2] x 4 -> global avg pool
                -> dense(128) -> relu -> dense(num_classes)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import blobs
from .config import NetworkSpec
from .dsp import LogSpectrogram
from .errors import CheckpointError, CheckpointShapeError, ConfigError, NumericError

CHECKPOINT_MAGIC = b"ASTC"
STD_FLOOR = 1e-8


def param_shapes(spec: NetworkSpec) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes, in checkpoint order."""
    shapes: dict[str, tuple[int, ...]] = {}
    c_in = 1
    for name, block in zip(spec.layer_ids, spec.conv_blocks):
        k = block.kernel
        shapes[f"{name}.kernel"] = (k, k, c_in, block.out_channels)
        shapes[f"{name}.bias"] = (block.out_channels,)
        c_in = block.out_channels
    hidden, classes = spec.head.hidden_units, spec.head.num_classes
    shapes["dense1.weight"] = (c_in, hidden)
    shapes["dense1.bias"] = (hidden,)
    shapes["dense2.weight"] = (hidden, classes)
    shapes["dense2.bias"] = (classes,)
    return shapes


def parameter_count(spec: NetworkSpec) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(spec).values())


@dataclass
class Network:
    spec: NetworkSpec
    params: dict[str, np.ndarray]  # float32, param_shapes order
    trained: bool = False

    @property
    def layer_ids(self) -> tuple[str, ...]:
        return self.spec.layer_ids

    def copy(self) -> Network:
        return Network(self.spec, {k: v.copy() for k, v in self.params.items()}, self.trained)


def build(spec: NetworkSpec | None = None, seed: int = 0) -> Network:
    """He-normal kernels and weights, zero biases."""
    spec = spec or NetworkSpec()
    if len(spec.conv_blocks) < 1 or spec.head.num_classes < 2:
        raise ConfigError("network needs at least one conv block and two classes")
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(spec).items():
        if name.endswith("bias"):
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[:-1]))
            params[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)
    return Network(spec, params)


@dataclass
class Activations:
    per_layer: dict[str, object]  # post-relu conv outputs, before pooling
    logits: object


def forward_on_tape(spec: NetworkSpec, params: dict[str, ad.Tensor], x: ad.Tensor,
                    want_activations: bool = True) -> Activations:
    """Build the forward graph for ``x`` (F x T, or N x F x T) on ``x.tape``."""
    if x.ndim == 2:
        h = ad.reshape(x, (1, 1) + x.shape)
    elif x.ndim == 3:
        h = ad.reshape(x, (x.shape[0], 1) + x.shape[1:])
    else:
        raise ConfigError(f"network input must be F x T or N x F x T, got {x.shape}")
    h = ad.standardize(h, axes=(1, 2, 3), floor=STD_FLOOR)
    acts = {}
    for name, block in zip(spec.layer_ids, spec.conv_blocks):
        h = ad.relu(ad.conv2d(h, params[f"{name}.kernel"], params[f"{name}.bias"]))
        if want_activations:
            acts[name] = h
        if block.pool:
            h = ad.maxpool2x2(h)
    h = ad.global_avg_pool(h)
    h = ad.relu(ad.dense(h, params["dense1.weight"], params["dense1.bias"]))
    logits = ad.dense(h, params["dense2.weight"], params["dense2.bias"])
    if x.ndim == 2:
        logits = ad.reshape(logits, (spec.head.num_classes,))
    return Activations(acts, logits)


def params_on_tape(net: Network, tape: ad.Tape, trainable: bool, dtype=np.float64) -> dict[str, ad.Tensor]:
    make = tape.variable if trainable else tape.constant
    return {k: make(v.astype(dtype)) for k, v in net.params.items()}


def forward(net: Network, x, want_activations: bool = True, dtype=np.float64) -> Activations:
    """Evaluate the network on one spectrogram; returns plain arrays.

    Activations of a single F x T input have shape C x H x W.
    """
    values = x.values if isinstance(x, LogSpectrogram) else np.asarray(x)
    if not np.all(np.isfinite(values)):
        raise NumericError("network input contains non-finite values")
    tape = ad.Tape()
    params = params_on_tape(net, tape, trainable=False, dtype=dtype)
    out = forward_on_tape(net.spec, params, tape.constant(values.astype(dtype)), want_activations)
    per_layer = {}
    for k, t in out.per_layer.items():
        per_layer[k] = t.data[0] if values.ndim == 2 else t.data
    tape.release()
    return Activations(per_layer, out.logits.data)


def predict(net: Network, batch: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Class indices for an N x F x T batch."""
    tape = ad.Tape()
    params = params_on_tape(net, tape, trainable=False, dtype=dtype)
    acts = forward_on_tape(net.spec, params, tape.constant(batch.astype(dtype)), want_activations=False)
    tape.release()
    return np.argmax(acts.logits.data, axis=-1)


# checkpoints


@dataclass
class Checkpoint:
    spec: NetworkSpec
    weights: dict[str, np.ndarray]
    training_meta: dict = field(default_factory=dict)

    def network(self) -> Network:
        weights = {k: v.astype(np.float32) for k, v in self.weights.items()}
        return Network(self.spec, weights, trained=bool(self.training_meta.get("epochs")))

    @classmethod
    def from_network(cls, net: Network, meta: dict | None = None) -> Checkpoint:
        return cls(net.spec, {k: v.copy() for k, v in net.params.items()}, dict(meta or {}))


def _validate_shapes(spec: NetworkSpec, weights: dict[str, np.ndarray], source: str) -> None:
    expected = param_shapes(spec)
    if list(weights) != list(expected):
        raise CheckpointShapeError(f"{source}: parameter names {list(weights)} do not match spec {list(expected)}")
    for name, shape in expected.items():
        if weights[name].shape != shape:
            raise CheckpointShapeError(f"{source}: {name} has shape {weights[name].shape}, spec needs {shape}")


def save(ckpt: Checkpoint, path) -> None:
    _validate_shapes(ckpt.spec, ckpt.weights, "checkpoint")
    header = {
        "kind": "checkpoint",
        "spec": ckpt.spec.model_dump(mode="json"),
        "meta": ckpt.training_meta,
        "names": list(ckpt.weights),
    }
    with open(path, "wb") as fh:
        blobs.write(fh, CHECKPOINT_MAGIC, header, list(ckpt.weights.values()))


def load(path, expect: NetworkSpec | None = None) -> Checkpoint:
    """Read a checkpoint; with ``expect``, also require its layer shapes."""
    source = str(path)
    header, tensors = blobs.read(Path(path).read_bytes(), CHECKPOINT_MAGIC, source)
    try:
        spec = NetworkSpec.model_validate_json(json.dumps(header["spec"]))
        names = header["names"]
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"{source}: bad header ({e})") from None
    if len(names) != len(tensors):
        raise CheckpointShapeError(f"{source}: header lists {len(names)} tensors, file holds {len(tensors)}")
    weights = dict(zip(names, tensors))
    _validate_shapes(spec, weights, source)
    if expect is not None:
        _validate_shapes(expect, weights, source)
    return Checkpoint(spec, weights, header.get("meta", {}))
