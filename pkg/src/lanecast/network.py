"""The two spatio-temporal CNNs: maneuver classifier and maneuver-conditioned
trajectory regressor. Both share the same four-layer convolutional trunk
layout but never share weights.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .errors import NormalizerMismatchError, ShapeError
from .neighborhood import N_CLASSES, PRED_STEPS, Normalizer

CLASSIFIER = "classifier"
REGRESSOR = "regressor"
HIDDEN = 40


@dataclass(frozen=True)
class TrunkConfig:
    layers: tuple[ops.ConvSpec, ...]
    input_shape: tuple[int, int, int] = (4, 8, 30)
    slope: float = ops.DEFAULT_SLOPE

    @classmethod
    def default(cls, in_channels: int = 4, dilated: bool = True, slope: float = ops.DEFAULT_SLOPE):
        z = 1 if dilated else 0
        layers = (
            ops.ConvSpec(in_channels, 24, 5, 10, 0, z),
            ops.ConvSpec(24, 40, 3, 3, 0, z),
            ops.ConvSpec(40, 56, 2, 3, 0, z),
            ops.ConvSpec(56, 24, 1, 1, 0, 0),
        )
        return cls(layers, (in_channels, 8, 30), slope)

    def shapes(self) -> list[tuple[int, int, int]]:
        """Activation shapes from the input through every conv layer."""
        shapes = [tuple(self.input_shape)]
        for spec in self.layers:
            shapes.append(spec.output_shape(shapes[-1]))
        return shapes

    @property
    def feature_size(self) -> int:
        return int(np.prod(self.shapes()[-1]))

    def receptive_fields(self) -> list[tuple[int, int, int]]:
        c = self.input_shape[0]
        return [ops.receptive_field(self.layers[: i + 1], c) for i in range(len(self.layers))]

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "slope": self.slope,
            "layers": [
                [s.in_channels, s.out_channels, s.kernel_rows, s.kernel_cols, s.dilation_rows, s.dilation_cols]
                for s in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrunkConfig":
        return cls(
            tuple(ops.ConvSpec(*spec) for spec in d["layers"]),
            tuple(d["input_shape"]),
            float(d["slope"]),
        )


@dataclass(frozen=True)
class Architecture:
    kind: str
    trunk: TrunkConfig = field(default_factory=TrunkConfig.default)
    hidden: int = HIDDEN
    steps: int = PRED_STEPS
    maneuver_input: bool = True

    def __post_init__(self):
        if self.kind not in (CLASSIFIER, REGRESSOR):
            raise ValueError(f"unknown network kind {self.kind!r}")
        self.trunk.shapes()  # validates the whole shape chain

    @property
    def takes_maneuvers(self) -> bool:
        return self.kind == REGRESSOR and self.maneuver_input

    @property
    def head_input(self) -> int:
        return self.trunk.feature_size + (self.steps if self.takes_maneuvers else 0)

    @property
    def output_shape(self) -> tuple[int, int]:
        return (self.steps, N_CLASSES if self.kind == CLASSIFIER else 2)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for i, spec in enumerate(self.trunk.layers, start=1):
            shapes[f"conv{i}.weight"] = spec.weight_shape
            shapes[f"conv{i}.bias"] = (spec.out_channels,)
        n_out = int(np.prod(self.output_shape))
        shapes["fc1.weight"] = (self.head_input, self.hidden)
        shapes["fc1.bias"] = (self.hidden,)
        shapes["fc2.weight"] = (self.hidden, n_out)
        shapes["fc2.bias"] = (n_out,)
        return shapes

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "trunk": self.trunk.to_dict(),
            "hidden": self.hidden,
            "steps": self.steps,
            "maneuver_input": self.maneuver_input,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(
            d["kind"],
            TrunkConfig.from_dict(d["trunk"]),
            int(d["hidden"]),
            int(d["steps"]),
            bool(d["maneuver_input"]),
        )


@dataclass
class NetworkParams:
    arch: Architecture
    tensors: dict[str, np.ndarray]
    normalizer_digest: str = ""

    def __post_init__(self):
        expected = self.arch.param_shapes()
        if list(self.tensors) != list(expected):
            raise ShapeError(f"parameter names {list(self.tensors)} != {list(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeError(f"{name} has shape {self.tensors[name].shape}, expected {shape}")

    @property
    def kind(self) -> str:
        return self.arch.kind

    def values(self) -> list[np.ndarray]:
        return list(self.tensors.values())

    def astype(self, dtype) -> "NetworkParams":
        return replace(self, tensors={k: v.astype(dtype) for k, v in self.tensors.items()})

    def copy(self) -> "NetworkParams":
        return replace(self, tensors={k: v.copy() for k, v in self.tensors.items()})


def init_params(arch: Architecture, seed: int = 0, dtype=np.float32) -> NetworkParams:
    """Uniform fan-in initialisation, He-scaled for the leaky-ReLU layers."""
    rng = np.random.default_rng(seed)
    slope = arch.trunk.slope
    tensors = {}
    for name, shape in arch.param_shapes().items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
        if name == "fc2.weight":
            bound = np.sqrt(3.0 / fan_in)
        else:
            bound = np.sqrt(6.0 / ((1.0 + slope**2) * fan_in))
        tensors[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return NetworkParams(arch, tensors)


def count_parameters(*params) -> int:
    """Number of scalar trainable parameters; accepts params or architectures."""
    total = 0
    for p in params:
        shapes = p.param_shapes() if isinstance(p, Architecture) else p.arch.param_shapes()
        total += sum(int(np.prod(s)) for s in shapes.values())
    return total


def _batch_inputs(x: np.ndarray, arch: Architecture):
    if x.ndim == 3:
        x = x[None]
        single = True
    elif x.ndim == 4:
        single = False
    else:
        raise ShapeError(f"network input must be 3D or 4D, got {x.shape}")
    if x.shape[1:] != tuple(arch.trunk.input_shape):
        raise ShapeError(f"network expects input {arch.trunk.input_shape}, got {x.shape[1:]}")
    return x, single


def forward(params: NetworkParams, x: np.ndarray, maneuvers=None, keep_cache: bool = False):
    """Run the network on a batch ``(N, C, 8, 30)``; returns ``(outputs, cache)``.

    Outputs are ``(N, steps, 3)`` logits for the classifier and ``(N, steps, 2)``
    normalized offsets for the regressor.
    """
    arch = params.arch
    t = params.tensors
    slope = arch.trunk.slope
    dtype = t["conv1.weight"].dtype
    x, single = _batch_inputs(np.asarray(x, dtype=dtype), arch)
    n = x.shape[0]
    cache = {"x": [], "z": []} if keep_cache else None

    h = x
    for i, spec in enumerate(arch.trunk.layers, start=1):
        z = ops.conv2d_forward(h, spec, t[f"conv{i}.weight"], t[f"conv{i}.bias"])
        if keep_cache:
            cache["x"].append(h)
            cache["z"].append(z)
        h = ops.leaky_relu(z, slope)
    feats = h.reshape(n, -1)
    if arch.takes_maneuvers:
        if maneuvers is None:
            raise ValueError("the regressor needs a maneuver sequence")
        m = np.asarray(maneuvers).reshape(n, arch.steps).astype(dtype)
        feats = np.concatenate([feats, m], axis=1)
    z5 = ops.dense_forward(feats, t["fc1.weight"], t["fc1.bias"])
    h5 = ops.leaky_relu(z5, slope)
    out = ops.dense_forward(h5, t["fc2.weight"], t["fc2.bias"]).reshape(n, *arch.output_shape)
    if keep_cache:
        cache.update(feats=feats, z5=z5, h5=h5, conv_out_shape=h.shape)
    if single:
        out = out[0]
    return out, cache


def backward(params: NetworkParams, cache: dict, grad_out: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter, given d(loss)/d(outputs)."""
    arch = params.arch
    t = params.tensors
    slope = arch.trunk.slope
    n = cache["feats"].shape[0]
    g = grad_out.reshape(n, -1)
    grads = {}

    g, grads["fc2.weight"], grads["fc2.bias"] = ops.dense_backward(cache["h5"], t["fc2.weight"], g)
    g = ops.leaky_relu_backward(cache["z5"], g, slope)
    g, grads["fc1.weight"], grads["fc1.bias"] = ops.dense_backward(cache["feats"], t["fc1.weight"], g)
    g = g[:, : arch.trunk.feature_size].reshape(cache["conv_out_shape"])

    for i in range(len(arch.trunk.layers), 0, -1):
        spec = arch.trunk.layers[i - 1]
        g = ops.leaky_relu_backward(cache["z"][i - 1], g, slope)
        g, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = ops.conv2d_backward(
            cache["x"][i - 1], spec, t[f"conv{i}.weight"], g, need_input_grad=i > 1
        )
    return {k: grads[k] for k in t}


@dataclass
class TrajectoryPrediction:
    normalized_offsets: np.ndarray
    offsets: np.ndarray

    def absolute(self, origin) -> np.ndarray:
        """Offsets added to the target position at t=0."""
        return self.offsets + np.asarray(origin, dtype=np.float64)[..., None, :]


@dataclass
class Prediction:
    maneuvers: np.ndarray
    probabilities: np.ndarray
    trajectory: TrajectoryPrediction
    positions: np.ndarray | None
    elapsed_s: float


def classify(tensor, params: NetworkParams):
    """Per-step class probabilities and the argmax maneuver sequence.

    Ties resolve toward straight, then left (lowest class index wins).
    """
    if params.kind != CLASSIFIER:
        raise ValueError("classify needs classifier parameters")
    logits, _ = forward(params, tensor)
    probs = ops.softmax(logits.astype(np.float64))
    return probs, np.argmax(probs, axis=-1).astype(np.int64)


def regress(tensor, maneuvers, params: NetworkParams, normalizer: Normalizer) -> TrajectoryPrediction:
    if params.kind != REGRESSOR:
        raise ValueError("regress needs regressor parameters")
    maneuvers = np.asarray(maneuvers)
    if params.arch.takes_maneuvers and maneuvers.shape[-1] != params.arch.steps:
        raise ShapeError(f"maneuver sequence must have length {params.arch.steps}")
    out, _ = forward(params, tensor, maneuvers if params.arch.takes_maneuvers else None)
    out = out.astype(np.float64)
    return TrajectoryPrediction(out, normalizer.denormalize_offsets(out))


def predict(tensor, classifier: NetworkParams, regressor: NetworkParams, normalizer: Normalizer, origin=None) -> Prediction:
    """Classify the maneuver sequence, then regress the trajectory conditioned on it."""
    digest = normalizer.digest()
    for p in (classifier, regressor):
        if p.normalizer_digest and p.normalizer_digest != digest:
            raise NormalizerMismatchError(
                f"{p.kind} was trained with normalizer {p.normalizer_digest[:12]}, got {digest[:12]}"
            )
    start = time.perf_counter()
    probs, seq = classify(tensor, classifier)
    traj = regress(tensor, seq, regressor, normalizer)
    elapsed = time.perf_counter() - start
    positions = traj.absolute(origin) if origin is not None else None
    return Prediction(seq, probs, traj, positions, elapsed)
