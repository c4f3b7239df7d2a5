"""Mini-batch Adam training for the classifier and the regressor."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .dataset import WindowDataset
from .errors import TrainingDivergenceError
from .network import CLASSIFIER, REGRESSOR, Architecture, NetworkParams, backward, forward, init_params
from .optim import DEFAULT_LEARNING_RATE, AdamState, adam_step

log = logging.getLogger(__name__)

LR_SCHEDULES = ("constant", "cosine")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = DEFAULT_LEARNING_RATE
    epochs: int = 300
    batch_size: int = 128
    seed: int = 0
    teacher_forcing: bool = True
    lr_schedule: str = "constant"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError(f"training settings must be positive: {self}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")

    def learning_rate_at(self, epoch: int) -> float:
        """Rate used during ``epoch`` (1-based)."""
        if self.lr_schedule == "cosine":
            return self.learning_rate * 0.5 * (1.0 + math.cos(math.pi * (epoch - 1) / self.epochs))
        return self.learning_rate

    @classmethod
    def from_dict(cls, d: dict | None) -> "TrainConfig":
        d = dict(d or {})
        known = {k: d.pop(k) for k in list(d) if k in cls.__dataclass_fields__}
        if d:
            raise ValueError(f"unknown training settings: {sorted(d)}")
        return cls(**known)


@dataclass
class TrainHistory:
    initial_loss: float = float("nan")
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0


def _loss_and_grad(kind, out, batch_maneuvers, batch_offsets):
    if kind == CLASSIFIER:
        return ops.softmax_nll(out, batch_maneuvers), ops.softmax_nll_backward(out, batch_maneuvers)
    return ops.rmse_loss(out, batch_offsets), ops.rmse_loss_backward(out, batch_offsets)


def dataset_loss(params: NetworkParams, data: WindowDataset, chunk: int = 512) -> float:
    """Mean classification NLL, or joint RMSE over all sample-steps, on ``data``."""
    if len(data) == 0:
        return float("nan")
    if params.kind == CLASSIFIER:
        total = 0.0
        for s in range(0, len(data), chunk):
            out, _ = forward(params, data.inputs[s : s + chunk])
            total += ops.softmax_nll(out, data.maneuvers[s : s + chunk]) * len(out)
        return total / len(data)
    sq = 0.0
    for s in range(0, len(data), chunk):
        m = data.maneuvers[s : s + chunk] if params.arch.takes_maneuvers else None
        out, _ = forward(params, data.inputs[s : s + chunk], m)
        sq += float(np.sum((out.astype(np.float64) - data.offsets[s : s + chunk]) ** 2))
    return float(np.sqrt(sq / (len(data) * params.arch.steps)))


def train_network(arch: Architecture, train: WindowDataset, config: TrainConfig,
                  val: WindowDataset | None = None, init: NetworkParams | None = None):
    """Fit one network with Adam; returns the best-validation parameters and history.

    Without a validation set the final parameters are returned.
    """
    if len(train) == 0:
        raise ValueError("empty training set")
    if arch.kind == REGRESSOR and not config.teacher_forcing:
        raise ValueError("the regressor is trained on ground-truth maneuvers (teacher forcing)")
    params = init.copy() if init is not None else init_params(arch, config.seed)
    params.normalizer_digest = train.normalizer.digest()
    state = AdamState.for_params(params.values(), learning_rate=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    history = TrainHistory(initial_loss=dataset_loss(params, train))
    best, best_val = params.copy(), np.inf
    uses_maneuvers = arch.takes_maneuvers
    n = len(train)

    for epoch in range(1, config.epochs + 1):
        state.learning_rate = config.learning_rate_at(epoch)
        order = rng.permutation(n)
        seen, running = 0, 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s : s + config.batch_size]
            m = train.maneuvers[idx]
            out, cache = forward(params, train.inputs[idx], m if uses_maneuvers else None, keep_cache=True)
            loss, grad_out = _loss_and_grad(arch.kind, out, m, train.offsets[idx])
            if not np.isfinite(loss):
                raise TrainingDivergenceError(
                    f"{arch.kind} loss became {loss} at epoch {epoch}, batch starting {s}; "
                    f"last epoch loss {history.train_loss[-1] if history.train_loss else history.initial_loss}"
                )
            grads = backward(params, cache, grad_out)
            adam_step(params.values(), [grads[k] for k in params.tensors], state)
            running += loss * len(idx)
            seen += len(idx)
        history.train_loss.append(running / seen)
        if val is not None and len(val):
            v = dataset_loss(params, val)
            history.val_loss.append(v)
            if v < best_val:
                best_val, best = v, params.copy()
                history.best_epoch = epoch
        if epoch % 25 == 0 or epoch == config.epochs:
            log.info("%s epoch %d train %.5f val %s", arch.kind, epoch, history.train_loss[-1],
                     f"{history.val_loss[-1]:.5f}" if history.val_loss else "-")

    if val is None or not len(val):
        history.best_epoch = config.epochs
        return params, history
    return best, history


def train_classifier(dataset: WindowDataset, config: TrainConfig = TrainConfig(),
                     val: WindowDataset | None = None, arch: Architecture | None = None):
    """Minimise the per-step summed negative log-likelihood."""
    arch = arch or Architecture(CLASSIFIER)
    return train_network(arch, dataset, config, val)


def train_regressor(dataset: WindowDataset, config: TrainConfig = TrainConfig(),
                    val: WindowDataset | None = None, arch: Architecture | None = None):
    """Minimise the batch RMSE of normalized offsets, fed ground-truth maneuvers."""
    arch = arch or Architecture(REGRESSOR)
    return train_network(arch, dataset, config, val)
