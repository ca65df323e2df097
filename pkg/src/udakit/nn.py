"""Small fully-connected networks with analytic gradients.

Everything is float64 numpy so gradients can be checked against central
finite differences. A model is three pieces: a feature extractor (rectifier
MLP whose output is the feature vector), a label predictor, and, for the
adversarial trainers, one or more domain discriminators.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DomainDataset, weighted_sampler_weights

__all__ = [
    "Mlp",
    "SgdState",
    "TrainConfig",
    "RunRecord",
    "ErmResult",
    "ModelBundle",
    "DivergenceError",
    "init_mlp",
    "forward",
    "backward",
    "softmax",
    "cross_entropy",
    "init_sgd",
    "sgd_step",
    "train_erm",
    "predict",
    "extract_features",
    "save_model",
    "load_model",
    "save_run_record",
]


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite loss or gradient."""


@dataclass
class Mlp:
    """Stack of affine layers; weights[i] is (out, in), biases[i] is (out,).

    activations[i] is "relu" or "identity". The feature extractor uses relu
    on every layer (its output is a hidden activation); predictor heads end
    with identity logits.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self) -> None:
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases, activations must have equal length")
        for i, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} do not compose")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input size {w.shape[1]} does not match previous output")
            if act not in ("relu", "identity"):
                raise ValueError(f"layer {i}: unknown activation {act!r}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {i}: non-finite parameters")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights],
                   [b.copy() for b in self.biases],
                   list(self.activations))


def init_mlp(sizes: list[int], rng: np.random.Generator, final: str = "identity") -> Mlp:
    """He-initialized MLP with relu hidden layers and `final` on the last."""
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    weights, biases, acts = [], [], []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        weights.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
        acts.append("relu" if i < len(sizes) - 2 else final)
    return Mlp(weights, biases, acts)


def forward(mlp: Mlp, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Run the network; returns (output, activations).

    activations[0] is the input and activations[-1] the output, so callers
    have every intermediate needed for backprop or feature export.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != mlp.in_dim:
        raise ValueError(f"input shape {x.shape} does not match first layer ({mlp.in_dim} columns)")
    if not np.isfinite(x).all():
        raise ValueError("non-finite network input")
    acts = [x]
    h = x
    for w, b, act in zip(mlp.weights, mlp.biases, mlp.activations):
        h = h @ w.T + b
        if act == "relu":
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts[-1], acts


def backward(mlp: Mlp, acts: list[np.ndarray],
             grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Backpropagate grad_out through a forward() activation trace.

    Returns ([dW0, db0, dW1, db1, ...], grad wrt the input).
    """
    g = grad_out
    grads: list[np.ndarray] = []
    for i in range(len(mlp.weights) - 1, -1, -1):
        if mlp.activations[i] == "relu":
            g = g * (acts[i + 1] > 0.0)
        grads.append(g.sum(axis=0))          # db
        grads.append(g.T @ acts[i])          # dW
        g = g @ mlp.weights[i]
    grads.reverse()
    return grads, g


def mlp_blocks(mlp: Mlp, prefix: str) -> list[tuple[str, np.ndarray]]:
    """Named parameter arrays, in the same order backward() emits gradients."""
    out = []
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        out.append((f"{prefix}.w{i}", w))
        out.append((f"{prefix}.b{i}", b))
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by max subtraction."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient wrt logits.

    grad = (softmax - onehot) / batch, so downstream backprop needs no
    extra normalization.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n, m = logits.shape
    if labels.shape != (n,) or (n and (labels.min() < 0 or labels.max() >= m)):
        raise ValueError("labels must be one id in [0, n_outputs) per row")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_norm - z[np.arange(n), labels]))
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


@dataclass
class SgdState:
    """SGD-with-momentum state; velocity buffers mirror the parameter blocks."""

    learning_rate: float
    momentum: float
    velocities: list[np.ndarray]
    step: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


def init_sgd(blocks: list[tuple[str, np.ndarray]], learning_rate: float,
             momentum: float) -> SgdState:
    return SgdState(learning_rate, momentum, [np.zeros_like(p) for _, p in blocks])


def sgd_step(blocks: list[tuple[str, np.ndarray]], grads: list[np.ndarray],
             state: SgdState) -> None:
    """One in-place momentum update: v <- m*v + g; p <- p - lr*v."""
    if len(blocks) != len(grads) or len(blocks) != len(state.velocities):
        raise ValueError("blocks, grads, and velocities must align")
    for (name, param), grad, vel in zip(blocks, grads, state.velocities):
        if grad.shape != param.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if not np.isfinite(grad).all():
            raise DivergenceError(f"non-finite gradient in {name}")
        vel *= state.momentum
        vel += grad
        param -= state.learning_rate * vel
    state.step += 1


@dataclass
class TrainConfig:
    """Shared knobs for every training scheme."""

    n_classes: int | None = None       # resolved from data when None
    hidden_sizes: tuple[int, ...] = (32, 32)
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 100
    resample: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if not self.hidden_sizes:
            raise ValueError("need at least one hidden layer")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "hidden_sizes": list(self.hidden_sizes),
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "resample": self.resample,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(payload: dict) -> "TrainConfig":
        known = {f: payload[f] for f in TrainConfig.__dataclass_fields__ if f in payload}
        cfg = TrainConfig(**known)
        if isinstance(payload.get("hidden_sizes"), list):
            cfg.hidden_sizes = tuple(payload["hidden_sizes"])
        return cfg


@dataclass
class RunRecord:
    """Per-run provenance: config, seed, per-epoch loss traces, warnings."""

    scheme: str
    seed: int
    config: dict
    epoch_losses: dict[str, list[float]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    final: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "seed": self.seed,
            "config": self.config,
            "epoch_losses": self.epoch_losses,
            "warnings": self.warnings,
            "final": self.final,
        }


def save_run_record(record: RunRecord, path: str | Path,
                    model_ref: str | None = None) -> None:
    payload = record.to_dict()
    payload["model_ref"] = model_ref
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def seed_streams(seed: int, n: int = 4) -> list[np.random.Generator]:
    """Independent generators for model init, source batching, target batching,
    and auxiliary draws, so optional branches never perturb the shared ones."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.default_rng(c) for c in children]


def epoch_batches(rng: np.random.Generator, labels: np.ndarray, batch_size: int,
                  resample: bool, n_classes: int) -> list[np.ndarray]:
    """Mini-batch index lists for one epoch.

    Plain epochs shuffle without replacement; resampled epochs draw n indices
    with replacement proportionally to class-balancing sampler weights.
    """
    n = labels.shape[0]
    if resample:
        w = weighted_sampler_weights(labels, n_classes)
        idx = rng.choice(n, size=n, replace=True, p=w / w.sum())
    else:
        idx = rng.permutation(n)
    return [idx[s:s + batch_size] for s in range(0, n, batch_size)]


def resolve_n_classes(cfg: TrainConfig, *label_arrays: np.ndarray) -> int:
    if cfg.n_classes is not None:
        return int(cfg.n_classes)
    return int(max(int(a.max()) for a in label_arrays if a.size)) + 1


def build_model(dim: int, n_classes: int, cfg: TrainConfig,
                rng: np.random.Generator) -> tuple[Mlp, Mlp]:
    """Fresh extractor + label predictor. Draw order matters for determinism."""
    extractor = init_mlp([dim, *cfg.hidden_sizes], rng, final="relu")
    classifier = init_mlp([cfg.hidden_sizes[-1], n_classes], rng, final="identity")
    return extractor, classifier


@dataclass
class ErmResult:
    extractor: Mlp
    classifier: Mlp
    record: RunRecord

    @property
    def final_loss(self) -> float:
        return self.record.final["classification_loss"]


def train_erm(source: DomainDataset, cfg: TrainConfig) -> ErmResult:
    """Mini-batch SGD on the source cross-entropy; no adaptation."""
    if source.n_samples == 0:
        raise ValueError("source dataset is empty")
    n_classes = resolve_n_classes(cfg, source.labels)
    rng_init, rng_batch = seed_streams(cfg.seed)[:2]
    extractor, classifier = build_model(source.dim, n_classes, cfg, rng_init)
    blocks = mlp_blocks(extractor, "extractor") + mlp_blocks(classifier, "classifier")
    opt = init_sgd(blocks, cfg.learning_rate, cfg.momentum)

    record = RunRecord("erm", cfg.seed, cfg.to_dict(), {"classification": []})
    for epoch in range(cfg.epochs):
        losses = []
        for idx in epoch_batches(rng_batch, source.labels, cfg.batch_size,
                                 cfg.resample, n_classes):
            loss, grads = _erm_step_grads(extractor, classifier,
                                          source.features[idx], source.labels[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            sgd_step(blocks, grads, opt)
            losses.append(loss)
        record.epoch_losses["classification"].append(float(np.mean(losses)))
    record.final["classification_loss"] = (
        record.epoch_losses["classification"][-1] if cfg.epochs else float("nan"))
    return ErmResult(extractor, classifier, record)


def _erm_step_grads(extractor: Mlp, classifier: Mlp, x: np.ndarray,
                    y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    feats, f_acts = forward(extractor, x)
    logits, c_acts = forward(classifier, feats)
    loss, dlogits = cross_entropy(logits, y)
    c_grads, dfeats = backward(classifier, c_acts, dlogits)
    f_grads, _ = backward(extractor, f_acts, dfeats)
    return loss, f_grads + c_grads


def predict(extractor: Mlp, classifier: Mlp,
            x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Softmax class scores and argmax labels (ties break to the lowest index)."""
    feats, _ = forward(extractor, x)
    logits, _ = forward(classifier, feats)
    scores = softmax(logits)
    return scores, np.argmax(scores, axis=1)


def extract_features(extractor: Mlp, x: np.ndarray) -> np.ndarray:
    """Feature vectors (the extractor's final rectified activation)."""
    feats, _ = forward(extractor, x)
    return feats


# ---------------------------------------------------------------------------
# Model files: JSON with layer shapes, activation tags, and full-precision
# row-major weight/bias arrays, plus the TrainConfig and seed that produced it.
# ---------------------------------------------------------------------------

def _mlp_to_dict(mlp: Mlp) -> dict:
    return {
        "layers": [
            {
                "shape": list(w.shape),
                "activation": act,
                "weights": [float(v) for v in w.ravel()],
                "bias": [float(v) for v in b],
            }
            for w, b, act in zip(mlp.weights, mlp.biases, mlp.activations)
        ]
    }


def _mlp_from_dict(payload: dict) -> Mlp:
    weights, biases, acts = [], [], []
    for layer in payload["layers"]:
        out_dim, in_dim = layer["shape"]
        weights.append(np.asarray(layer["weights"], dtype=np.float64).reshape(out_dim, in_dim))
        biases.append(np.asarray(layer["bias"], dtype=np.float64))
        acts.append(layer["activation"])
    return Mlp(weights, biases, acts)


@dataclass
class ModelBundle:
    """Everything needed to reuse a trained model: extractor, one classifier
    per source (one entry for single-head schemes), optional ensemble weights,
    and the training provenance."""

    extractor: Mlp
    classifiers: list[Mlp]
    ensemble_weights: list[float] | None
    train_config: dict
    seed: int


def save_model(bundle: ModelBundle, path: str | Path) -> None:
    payload = {
        "extractor": _mlp_to_dict(bundle.extractor),
        "classifiers": [_mlp_to_dict(c) for c in bundle.classifiers],
        "ensemble_weights": bundle.ensemble_weights,
        "train_config": bundle.train_config,
        "seed": bundle.seed,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_model(path: str | Path) -> ModelBundle:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return ModelBundle(
        extractor=_mlp_from_dict(payload["extractor"]),
        classifiers=[_mlp_from_dict(c) for c in payload["classifiers"]],
        ensemble_weights=payload.get("ensemble_weights"),
        train_config=payload.get("train_config", {}),
        seed=int(payload.get("seed", 0)),
    )
