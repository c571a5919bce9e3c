"""Frame-pair suitability: automatic labelling, MLP regression of NCC, selection.

The regressor maps the mode-weight vector of a pair to its predicted
motion-compensated NCC; thresholding at 0.9 gives the binary suitability.
Training the NCC value rather than the binary label keeps more signal in
the loss.  The network is implemented directly in numpy so its gradients
can be checked against finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pipeline
from .dp import DpConfig
from .raster import read_raster, write_raster
from .refine import RefineConfig, ncc, refine, warp
from .types import ModeBasis, RfFrame, WeightVector, NCC_SUITABILITY_THRESHOLD

CLASSIFIER_LAYER_SIZES = (12, 256, 128, 64, 1)
MODEL_MANIFEST = "model.json"


class TrainingDiverged(RuntimeError):
    """Validation loss became non-finite during training."""


@dataclass(frozen=True)
class LabeledInstance:
    """One training example: pair features, true NCC, and its thresholding."""

    w: WeightVector
    ncc_true: float
    suitable: bool
    valid: bool = True

    def __post_init__(self):
        if self.valid:
            if not np.isfinite(self.ncc_true):
                raise ValueError("valid instance requires a finite ncc_true")
            if self.suitable != (self.ncc_true > NCC_SUITABILITY_THRESHOLD):
                raise ValueError("suitable flag inconsistent with ncc threshold")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 1e-3
    batch_size: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    val_fraction: float = 0.2
    seed: int = 0
    include_residual: bool = False


@dataclass
class MlpModel:
    """Fully connected ReLU regressor with input standardization baked in."""

    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    metadata: dict = field(default_factory=dict)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """Batch forward pass; returns outputs and the per-layer cache for backprop."""
        h = np.asarray(x, dtype=np.float64)
        cache = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            cache.append((h, z))
            h = z if i == last else np.maximum(z, 0.0)
        return h[:, 0], cache

    def backward(self, cache: list, dout: np.ndarray) -> tuple[list, list]:
        """Gradients of the scalar loss w.r.t. weights and biases given d(loss)/d(output)."""
        grad_w = [None] * len(self.weights)
        grad_b = [None] * len(self.biases)
        delta = dout[:, None]
        for i in range(len(self.weights) - 1, -1, -1):
            h_in, z = cache[i]
            if i < len(self.weights) - 1:
                delta = delta * (z > 0)
            grad_w[i] = h_in.T @ delta
            grad_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i].T
        return grad_w, grad_b


def init_mlp(sizes, seed: int, feature_mean=None, feature_scale=None) -> MlpModel:
    """He-initialized hidden layers; the output layer starts at zero.

    Zero output weights make the initial network the constant-zero function,
    so regression targets are approached from the output bias outward and
    predictions stay tame away from the training manifold.
    """
    sizes = tuple(int(s) for s in sizes)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    last = len(sizes) - 2
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if i == last:
            weights.append(np.zeros((fan_in, fan_out)))
        else:
            weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    if feature_mean is None:
        feature_mean = np.zeros(sizes[0])
    if feature_scale is None:
        feature_scale = np.ones(sizes[0])
    return MlpModel(
        sizes=sizes,
        weights=weights,
        biases=biases,
        feature_mean=np.asarray(feature_mean, dtype=np.float64),
        feature_scale=np.asarray(feature_scale, dtype=np.float64),
    )


def instance_features(instance: LabeledInstance, include_residual: bool = False) -> np.ndarray:
    w = instance.w.w
    if include_residual:
        return np.concatenate([w, [instance.w.residual_norm]])
    return w.copy()


def _canonical_order(features: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Deterministic total order so training is invariant to input permutation."""
    keys = [targets] + [features[:, j] for j in range(features.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def _mse(model: MlpModel, x: np.ndarray, y: np.ndarray) -> float:
    pred, _ = model.forward(x)
    return float(np.mean((pred - y) ** 2))


def train(instances, cfg: TrainConfig | None = None) -> MlpModel:
    """Adam-trained MSE regression of NCC from the weight vectors.

    Deterministic given the seed: instances are canonically ordered before
    the seeded shuffle, so permuting the input leaves the result unchanged.
    """
    cfg = cfg or TrainConfig()
    usable = [inst for inst in instances if inst.valid]
    if len(usable) < 100:
        raise ValueError(f"need at least 100 valid instances, got {len(usable)}")
    features = np.stack([instance_features(inst, cfg.include_residual) for inst in usable])
    targets = np.array([inst.ncc_true for inst in usable])
    order = _canonical_order(features, targets)
    features, targets = features[order], targets[order]

    n = len(usable)
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_val = max(1, int(round(cfg.val_fraction * n)))
    train_idx, val_idx = perm[:-n_val], perm[-n_val:]
    x_train, y_train = features[train_idx], targets[train_idx]
    x_val, y_val = features[val_idx], targets[val_idx]

    feat_mean = x_train.mean(axis=0)
    feat_scale = np.maximum(x_train.std(axis=0), 1e-12)
    x_train = (x_train - feat_mean) / feat_scale
    x_val = (x_val - feat_mean) / feat_scale

    n_in = features.shape[1]
    sizes = (n_in,) + CLASSIFIER_LAYER_SIZES[1:]
    model = init_mlp(sizes, seed=int(rng.integers(2**31)), feature_mean=feat_mean, feature_scale=feat_scale)

    adam_m = [np.zeros_like(w) for w in model.weights] + [np.zeros_like(b) for b in model.biases]
    adam_v = [np.zeros_like(p) for p in adam_m]
    step = 0
    train_curve, val_curve = [], []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x_train))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            xb, yb = x_train[batch], y_train[batch]
            pred, cache = model.forward(xb)
            dout = 2.0 * (pred - yb) / len(batch)
            grad_w, grad_b = model.backward(cache, dout)
            grads = grad_w + grad_b
            params = model.weights + model.biases
            step += 1
            for p, g, mom, vel in zip(params, grads, adam_m, adam_v):
                mom *= cfg.adam_beta1
                mom += (1 - cfg.adam_beta1) * g
                vel *= cfg.adam_beta2
                vel += (1 - cfg.adam_beta2) * g * g
                m_hat = mom / (1 - cfg.adam_beta1**step)
                v_hat = vel / (1 - cfg.adam_beta2**step)
                p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        train_curve.append(_mse(model, x_train, y_train))
        val_curve.append(_mse(model, x_val, y_val))
        if not np.isfinite(val_curve[-1]):
            raise TrainingDiverged(
                f"validation loss {val_curve[-1]} at epoch {epoch + 1}/{cfg.epochs} "
                f"(lr={cfg.learning_rate}, batch={cfg.batch_size})"
            )

    model.metadata = {
        "epochs": cfg.epochs,
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
        "seed": cfg.seed,
        "include_residual": cfg.include_residual,
        "train_loss": train_curve,
        "val_loss": val_curve,
        "n_train": int(len(x_train)),
        "n_val": int(len(x_val)),
    }
    return model


def predict(model: MlpModel, w) -> float:
    """Predicted NCC for one feature vector."""
    w = w.w if isinstance(w, WeightVector) else np.asarray(w, dtype=np.float64)
    if w.shape != (model.sizes[0],):
        raise ValueError(f"expected {model.sizes[0]} features, got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("non-finite features")
    x = (w - model.feature_mean) / model.feature_scale
    out, _ = model.forward(x[None, :])
    return float(out[0])


def classify(model: MlpModel, w, threshold: float = NCC_SUITABILITY_THRESHOLD) -> bool:
    """Binary suitability: predicted NCC strictly above the threshold."""
    return bool(predict(model, w) > threshold)


def label_pair(
    frame_1: RfFrame,
    frame_2: RfFrame,
    basis: ModeBasis,
    dp_cfg: DpConfig | None = None,
    refine_cfg: RefineConfig | None = None,
) -> LabeledInstance:
    """Run the full pipeline on a pair and threshold the motion-compensated NCC.

    The features are the coarse-stage weights; pipeline failures yield an
    instance marked invalid instead of raising.
    """
    dp_cfg = dp_cfg or DpConfig()
    refine_cfg = refine_cfg or RefineConfig()
    try:
        est = pipeline.coarse_estimate(frame_1, frame_2, basis, dp_cfg)
        refined = refine(frame_1, frame_2, est.field, refine_cfg)
        warped, mask = warp(frame_2, refined)
        value = ncc(frame_1.samples, warped, mask)
    except (ValueError, np.linalg.LinAlgError):
        return LabeledInstance(
            w=WeightVector(w=np.zeros(basis.n_modes), residual_norm=0.0),
            ncc_true=float("nan"),
            suitable=False,
            valid=False,
        )
    return LabeledInstance(
        w=est.weights,
        ncc_true=value,
        suitable=bool(value > NCC_SUITABILITY_THRESHOLD),
    )


def select_best(
    model: MlpModel,
    basis: ModeBasis,
    frames,
    anchor: int,
    dp_cfg: DpConfig | None = None,
    window: int = 16,
) -> int:
    """Partner index with the highest predicted NCC in a window around the anchor.

    The window spans window/2 frames on each side, truncated at the sequence
    boundaries; ties prefer the nearer, then the earlier, candidate.
    """
    frames = list(frames)
    if not 0 <= anchor < len(frames):
        raise ValueError(f"anchor {anchor} outside sequence of {len(frames)}")
    dp_cfg = dp_cfg or DpConfig()
    half = window // 2
    candidates = [
        j
        for j in range(max(0, anchor - half), min(len(frames), anchor + half + 1))
        if j != anchor
    ]
    if not candidates:
        raise ValueError("no candidate frames in the window")
    best = None
    for j in candidates:
        est = pipeline.coarse_estimate(frames[anchor], frames[j], basis, dp_cfg)
        score = predict(model, est.weights)
        key = (-score, abs(j - anchor), j)
        if best is None or key < best[0]:
            best = (key, j)
    return best[1]


@dataclass(frozen=True)
class ClassifierMetrics:
    accuracy: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    degenerate: bool  # no positive prediction was made


def eval_classifier(
    model: MlpModel, instances, threshold: float = NCC_SUITABILITY_THRESHOLD
) -> ClassifierMetrics:
    """Accuracy and F1 of thresholded predictions against the true labels."""
    usable = [inst for inst in instances if inst.valid]
    if not usable:
        raise ValueError("no valid instances to evaluate")
    truth = np.array([inst.suitable for inst in usable])
    if not truth.any():
        raise ValueError("F1 needs at least one positive ground-truth instance")
    include_residual = model.sizes[0] == len(usable[0].w) + 1
    preds = np.array(
        [
            predict(model, instance_features(inst, include_residual)) > threshold
            for inst in usable
        ]
    )
    tp = int(np.sum(preds & truth))
    fp = int(np.sum(preds & ~truth))
    fn = int(np.sum(~preds & truth))
    tn = int(np.sum(~preds & ~truth))
    accuracy = (tp + tn) / len(usable)
    degenerate = (tp + fp) == 0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ClassifierMetrics(
        accuracy=accuracy, f1=f1, tp=tp, fp=fp, fn=fn, tn=tn, degenerate=degenerate
    )


def save_model(model: MlpModel, directory) -> None:
    """Persist the model as a manifest plus per-layer weight/bias rasters."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "sizes": list(model.sizes),
        "feature_mean": [float(v) for v in model.feature_mean],
        "feature_scale": [float(v) for v in model.feature_scale],
        "metadata": model.metadata,
    }
    with open(d / MODEL_MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=2)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        write_raster(d / f"weights_{i}.raster", w)
        write_raster(d / f"biases_{i}.raster", b[None, :])


def load_model(directory) -> MlpModel:
    d = Path(directory)
    with open(d / MODEL_MANIFEST) as fh:
        manifest = json.load(fh)
    sizes = tuple(manifest["sizes"])
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        weights.append(read_raster(d / f"weights_{i}.raster").astype(np.float64))
        biases.append(read_raster(d / f"biases_{i}.raster").astype(np.float64)[0])
    return MlpModel(
        sizes=sizes,
        weights=weights,
        biases=biases,
        feature_mean=np.asarray(manifest["feature_mean"], dtype=np.float64),
        feature_scale=np.asarray(manifest["feature_scale"], dtype=np.float64),
        metadata=manifest.get("metadata", {}),
    )
