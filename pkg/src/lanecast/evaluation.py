"""Metrics, the two-stage evaluation pipeline, ablation variants and report export."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import RawSamples, WindowDataset, fit_on, make_dataset
from .network import CLASSIFIER, REGRESSOR, Architecture, NetworkParams, TrunkConfig, classify, regress
from .neighborhood import N_CLASSES, N_SLOTS, PRED_STEPS, SIDE_GATE, Normalizer, normalize_inputs, raw_neighborhood
from .training import TrainConfig, TrainHistory, train_classifier, train_regressor

VARIANTS = (
    "full", "only_xy_channels", "without_neighborhood", "shuffled_neighborhood",
    "without_dilation", "without_maneuver", "sampled_maneuver",
)
CHANNEL_NAMES = ("x", "y", "v", "a")


# ---------------------------------------------------------------- metrics

def rmse_per_step(predicted, actual) -> np.ndarray:
    """sqrt(mean over samples of the squared Euclidean error), one value per step."""
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predicted.shape != actual.shape:
        raise ValueError(f"prediction shape {predicted.shape} != target shape {actual.shape}")
    if predicted.shape[0] == 0:
        raise ValueError("cannot compute RMSE over zero samples")
    return np.sqrt(np.mean(np.sum((predicted - actual) ** 2, axis=-1), axis=0))


def confusion_per_step(predicted, actual, n_classes: int = N_CLASSES) -> np.ndarray:
    """``(steps, true class, predicted class)`` counts."""
    predicted = np.asarray(predicted, dtype=np.int64)
    actual = np.asarray(actual, dtype=np.int64)
    steps = actual.shape[1]
    conf = np.zeros((steps, n_classes, n_classes), dtype=np.int64)
    for s in range(steps):
        np.add.at(conf[s], (actual[:, s], predicted[:, s]), 1)
    return conf


@dataclass
class EvalReport:
    rmse: np.ndarray          # (5,) metres
    accuracy: np.ndarray      # (5,)
    confusion: np.ndarray     # (5, 3, 3), rows = true class
    n: int
    fingerprint: str = ""
    variant: str = "full"

    def __eq__(self, other):
        if not isinstance(other, EvalReport):
            return NotImplemented
        return (
            self.n == other.n and self.fingerprint == other.fingerprint and self.variant == other.variant
            and np.array_equal(self.rmse, other.rmse) and np.array_equal(self.accuracy, other.accuracy)
            and np.array_equal(self.confusion, other.confusion)
        )

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "fingerprint": self.fingerprint,
            "n": int(self.n),
            "rmse": [float(v) for v in self.rmse],
            "accuracy": [float(v) for v in self.accuracy],
            "confusion": self.confusion.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            np.asarray(d["rmse"], dtype=np.float64),
            np.asarray(d["accuracy"], dtype=np.float64),
            np.asarray(d["confusion"], dtype=np.int64),
            int(d["n"]),
            d.get("fingerprint", ""),
            d.get("variant", "full"),
        )

    def summary(self) -> str:
        rm = " ".join(f"{v:.3f}" for v in self.rmse)
        ac = " ".join(f"{v:.3f}" for v in self.accuracy)
        return f"{self.variant}: n={self.n} rmse[m]=({rm}) acc=({ac})"


def report_from_predictions(pred_positions, true_positions, pred_maneuvers, true_maneuvers,
                            fingerprint: str = "", variant: str = "full") -> EvalReport:
    true_maneuvers = np.asarray(true_maneuvers)
    if len(true_maneuvers) == 0:
        raise ValueError("empty test set")
    conf = confusion_per_step(pred_maneuvers, true_maneuvers)
    acc = np.trace(conf, axis1=1, axis2=2) / len(true_maneuvers)
    return EvalReport(rmse_per_step(pred_positions, true_positions), acc, conf,
                      len(true_maneuvers), fingerprint, variant)


# ---------------------------------------------------------------- ablations

@dataclass(frozen=True)
class AblationSpec:
    """One row of the ablation matrix; each variant changes a single aspect."""

    variant: str = "full"
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown ablation variant {self.variant!r}; choose from {', '.join(VARIANTS)}")

    @property
    def channels(self) -> tuple[int, ...]:
        return (0, 1) if self.variant == "only_xy_channels" else (0, 1, 2, 3)

    def row_permutation(self) -> np.ndarray:
        """Fixed seeded slot order; no row keeps its place."""
        if self.variant != "shuffled_neighborhood":
            return np.arange(N_SLOTS)
        rng = np.random.default_rng(self.seed)
        while True:
            perm = rng.permutation(N_SLOTS)
            if np.all(perm != np.arange(N_SLOTS)):
                return perm

    def aspects(self) -> dict:
        v = self.variant
        if v == "without_neighborhood":
            rows = "target_only"
        elif v == "shuffled_neighborhood":
            rows = "permuted:" + ",".join(map(str, self.row_permutation()))
        else:
            rows = "semantic"
        return {
            "channels": ",".join(CHANNEL_NAMES[c] for c in self.channels),
            "rows": rows,
            "dilated": v != "without_dilation",
            "maneuver_input": v != "without_maneuver",
            "maneuver_source": "sampled" if v == "sampled_maneuver" else "classifier",
        }

    def architectures(self) -> tuple[Architecture, Architecture]:
        trunk = TrunkConfig.default(len(self.channels), dilated=self.variant != "without_dilation")
        return (
            Architecture(CLASSIFIER, trunk),
            Architecture(REGRESSOR, trunk, maneuver_input=self.variant != "without_maneuver"),
        )

    def transform(self, samples: RawSamples) -> RawSamples:
        """Apply the input-side change to unnormalized samples (train and eval alike)."""
        inputs, present = samples.inputs, samples.present
        if self.variant == "only_xy_channels":
            inputs = inputs[:, list(self.channels)]
        elif self.variant == "without_neighborhood":
            present = present.copy()
            present[:, 1:] = False
            inputs = np.where(present[:, None], inputs, 0.0)
        elif self.variant == "shuffled_neighborhood":
            perm = self.row_permutation()
            inputs = inputs[:, :, perm]
            present = present[:, perm]
        return replace(samples, inputs=inputs, present=present)


def fingerprint(aspects: dict, config: TrainConfig | None = None, extra: dict | None = None) -> str:
    payload = {"aspects": aspects, "train": asdict(config) if config else None, "extra": extra or {}}
    blob = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------- pipeline

@dataclass
class TrainedModels:
    classifier: NetworkParams
    regressor: NetworkParams
    normalizer: Normalizer
    spec: AblationSpec = field(default_factory=AblationSpec)
    maneuver_pool: np.ndarray | None = None        # training label sequences, for sampled_maneuver
    histories: tuple[TrainHistory, TrainHistory] | None = None
    config: TrainConfig | None = None

    def fingerprint(self, extra: dict | None = None) -> str:
        return fingerprint(self.spec.aspects(), self.config, extra)


def prepare(spec: AblationSpec, samples: RawSamples, normalizer: Normalizer) -> WindowDataset:
    return make_dataset(spec.transform(samples), normalizer)


def single_input(window, scenes, models: TrainedModels, side_gate: float = SIDE_GATE) -> np.ndarray:
    """Network input for one window under the models' variant and normalizer."""
    raw, present, _ = raw_neighborhood(window, scenes, side_gate)
    one = RawSamples(raw[None], present[None], np.zeros((1, PRED_STEPS), dtype=np.int64),
                     np.zeros((1, PRED_STEPS, 2)), window.origin[None], np.array([window.target_id]),
                     np.array([window.t0_frame]))
    t = models.spec.transform(one)
    return normalize_inputs(t.inputs[0], t.present[0], models.normalizer)


def train_models(train: RawSamples, config: TrainConfig = TrainConfig(), val: RawSamples | None = None,
                 spec: AblationSpec = AblationSpec(), normalize: bool = True) -> TrainedModels:
    """Fit the normalizer on ``train`` and train both networks from scratch."""
    if len(train) == 0:
        raise ValueError("empty training set")
    t_train = spec.transform(train)
    normalizer = fit_on(t_train, normalize)
    d_train = make_dataset(t_train, normalizer)
    d_val = prepare(spec, val, normalizer) if val is not None and len(val) else None
    arch_c, arch_r = spec.architectures()
    clf, h_c = train_classifier(d_train, config, d_val, arch_c)
    reg, h_r = train_regressor(d_train, config, d_val, arch_r)
    return TrainedModels(clf, reg, normalizer, spec, train.maneuvers.copy(), (h_c, h_r), config)


def evaluate(models: TrainedModels, test: RawSamples, extra: dict | None = None) -> EvalReport:
    """Two-stage evaluation on absolute positions.

    The regressor consumes the classifier's maneuvers, or for the
    ``sampled_maneuver`` variant sequences drawn from the training labels.
    """
    if len(test) == 0:
        raise ValueError("empty test set")
    data = prepare(models.spec, test, models.normalizer)
    _, seq = classify(data.inputs, models.classifier)
    feed = seq
    if models.spec.aspects()["maneuver_source"] == "sampled":
        pool = models.maneuver_pool
        if pool is None or len(pool) == 0:
            raise ValueError("sampled_maneuver needs the training label sequences")
        rng = np.random.default_rng(models.spec.seed)
        feed = pool[rng.integers(0, len(pool), size=len(data))]
    traj = regress(data.inputs, feed, models.regressor, models.normalizer)
    pred_abs = traj.absolute(data.origins)
    true_abs = data.raw_offsets + data.origins[:, None, :]
    return report_from_predictions(pred_abs, true_abs, seq, data.maneuvers,
                                   models.fingerprint(extra), models.spec.variant)


def run_ablation(spec: AblationSpec, train: RawSamples, test: RawSamples,
                 config: TrainConfig = TrainConfig(), val: RawSamples | None = None):
    """Retrain both networks for ``spec`` and evaluate on ``test``."""
    models = train_models(train, config, val, spec)
    return evaluate(models, test), models


# ---------------------------------------------------------------- export

REPORT_FORMATS = ("delimited", "structured")


def format_report(report: EvalReport, fmt: str = "delimited") -> str:
    if fmt == "delimited":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["horizon_s", "rmse_m", "acc", "n"])
        for step in range(len(report.rmse)):
            w.writerow([step + 1, repr(float(report.rmse[step])), repr(float(report.accuracy[step])), report.n])
        return buf.getvalue()
    if fmt == "structured":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    raise ValueError(f"unknown report format {fmt!r}; choose from {REPORT_FORMATS}")


def export_report(report: EvalReport, path, fmt: str = "delimited") -> Path:
    path = Path(path)
    text = format_report(report, fmt)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def read_report(path) -> EvalReport:
    """Read back a structured report."""
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
