"""Adversarial feature-alignment trainers.

Three schemes share the same ingredients (extractor, label predictor, binary
domain discriminators): a single-pass reversal trainer, a two-stage
discriminative aligner, and a multi-source trainer that combines per-source
losses through a smoothed maximum. Target data enters only as an
UnlabeledDomain view, so target labels are structurally unreachable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import DomainDataset, UnlabeledDomain, weighted_sampler_weights
from .nn import (
    DivergenceError,
    Mlp,
    RunRecord,
    TrainConfig,
    backward,
    build_model,
    cross_entropy,
    epoch_batches,
    forward,
    init_mlp,
    init_sgd,
    mlp_blocks,
    resolve_n_classes,
    seed_streams,
    sgd_step,
    train_erm,
)

__all__ = [
    "AdversarialConfig",
    "AdversarialResult",
    "GradReverse",
    "grad_reverse",
    "soft_aggregate",
    "train_dann",
    "train_adda",
    "train_mdan",
]


@dataclass
class AdversarialConfig:
    """Knobs shared by the adversarial trainers.

    domain_weight scales the reversed gradient flowing from the domain
    branch into the extractor; with the "ramp" schedule it rises linearly
    from 0 over the first ramp_fraction of all steps. gamma sets how sharply
    the multi-source trainer's soft maximum concentrates on the worst source.
    """

    train: TrainConfig = field(default_factory=TrainConfig)
    domain_weight: float = 1.0
    schedule: str = "ramp"
    ramp_fraction: float = 0.2
    disc_hidden: tuple[int, ...] = (16,)
    gamma: float = 10.0
    hard_max: bool = False
    pretrain_epochs: int | None = None
    adapt_epochs: int | None = None
    adapt_learning_rate: float | None = None  # stage-2 target-extractor rate

    def __post_init__(self) -> None:
        if self.domain_weight < 0:
            raise ValueError("domain_weight must be >= 0")
        if self.schedule not in ("constant", "ramp"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        self.disc_hidden = tuple(int(h) for h in self.disc_hidden)


class GradReverse:
    """Identity in the forward pass; multiplies the upstream gradient by
    -scale on the way back."""

    def __init__(self, scale: float):
        if scale < 0:
            raise ValueError("scale must be >= 0")
        self.scale = float(scale)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return -self.scale * grad


def grad_reverse(x: np.ndarray, scale: float) -> np.ndarray:
    """Forward half of the reversal: returns x unchanged."""
    return GradReverse(scale).forward(x)


def soft_aggregate(values: Sequence[float], gamma: float) -> float:
    """Smoothed maximum (1/gamma)*log(mean(exp(gamma*v))).

    Tends to mean(v) as gamma -> 0 and to max(v) as gamma -> inf; always
    within [mean(v), max(v)].
    """
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    z = gamma * np.asarray(values, dtype=np.float64)
    m = z.max()
    return float(m + np.log(np.mean(np.exp(z - m)))) / gamma


@dataclass
class AdversarialResult:
    extractor: Mlp
    classifier: Mlp
    discriminators: list[Mlp]
    record: RunRecord
    source_extractor: Mlp | None = None  # two-stage scheme keeps its stage-1 extractor


def _require_unlabeled(target: object) -> UnlabeledDomain:
    if isinstance(target, DomainDataset):
        raise TypeError(
            "target must be an UnlabeledDomain view; call .unlabeled() on the "
            "dataset so target labels cannot be read"
        )
    if not isinstance(target, UnlabeledDomain):
        raise TypeError(f"target must be an UnlabeledDomain, got {type(target).__name__}")
    if target.n_samples == 0:
        raise ValueError("target domain is empty")
    return target


def _domain_weight_at(cfg: AdversarialConfig, step: int, total_steps: int) -> float:
    if cfg.schedule == "constant":
        return cfg.domain_weight
    ramp_steps = max(1.0, cfg.ramp_fraction * total_steps)
    return cfg.domain_weight * min(1.0, step / ramp_steps)


def train_dann(source: DomainDataset, target: UnlabeledDomain,
               cfg: AdversarialConfig) -> AdversarialResult:
    """Single-pass reversal training.

    Each step minimizes source cross-entropy while the discriminator learns
    to tell source features from target features; the reversal layer feeds
    the extractor the negated, domain_weight-scaled domain gradient, pushing
    features toward domain invariance. With domain_weight = 0 the classifier
    trajectory is exactly the no-adaptation one (same seed, same batching).
    """
    target = _require_unlabeled(target)
    if source.dim != target.dim:
        raise ValueError("source and target feature dimensions differ")
    tcfg = cfg.train
    n_classes = resolve_n_classes(tcfg, source.labels)
    rng_init, rng_batch, rng_tgt, rng_disc = seed_streams(tcfg.seed)
    extractor, classifier = build_model(source.dim, n_classes, tcfg, rng_init)
    disc = init_mlp([tcfg.hidden_sizes[-1], *cfg.disc_hidden, 2], rng_disc, final="identity")
    blocks = (mlp_blocks(extractor, "extractor") + mlp_blocks(classifier, "classifier")
              + mlp_blocks(disc, "discriminator"))
    opt = init_sgd(blocks, tcfg.learning_rate, tcfg.momentum)

    steps_per_epoch = -(-source.n_samples // tcfg.batch_size)
    total_steps = tcfg.epochs * steps_per_epoch
    record = RunRecord("dann", tcfg.seed, _record_config(cfg),
                       {"classification": [], "domain": []})
    step = 0
    for epoch in range(tcfg.epochs):
        cls_losses, dom_losses = [], []
        for idx in epoch_batches(rng_batch, source.labels, tcfg.batch_size,
                                 tcfg.resample, n_classes):
            lam = _domain_weight_at(cfg, step, total_steps)
            xt = target.features[rng_tgt.choice(target.n_samples, size=idx.size)]
            cls_loss, dom_loss, grads = _dann_step_grads(
                extractor, classifier, disc,
                source.features[idx], source.labels[idx], xt, lam)
            if not (np.isfinite(cls_loss) and np.isfinite(dom_loss)):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            sgd_step(blocks, grads, opt)
            cls_losses.append(cls_loss)
            dom_losses.append(dom_loss)
            step += 1
        record.epoch_losses["classification"].append(float(np.mean(cls_losses)))
        record.epoch_losses["domain"].append(float(np.mean(dom_losses)))
    if tcfg.epochs:
        record.final["classification_loss"] = record.epoch_losses["classification"][-1]
        record.final["domain_loss"] = record.epoch_losses["domain"][-1]
    return AdversarialResult(extractor, classifier, [disc], record)


def _dann_step_grads(extractor: Mlp, classifier: Mlp, disc: Mlp,
                     xs: np.ndarray, ys: np.ndarray, xt: np.ndarray,
                     lam: float) -> tuple[float, float, list[np.ndarray]]:
    """Gradients for one reversal step.

    The discriminator trains on the plain binary domain loss; the extractor
    receives classifier gradient minus lam times the domain-branch gradient.
    """
    feats_s, acts_s = forward(extractor, xs)
    feats_t, acts_t = forward(extractor, xt)
    logits, c_acts = forward(classifier, feats_s)
    cls_loss, dlogits = cross_entropy(logits, ys)
    c_grads, dfeat_cls = backward(classifier, c_acts, dlogits)

    reverse = GradReverse(lam)
    dom_in = np.concatenate([reverse.forward(feats_s), reverse.forward(feats_t)], axis=0)
    dom_labels = np.concatenate([np.zeros(len(xs), dtype=np.int64),
                                 np.ones(len(xt), dtype=np.int64)])
    dom_logits, d_acts = forward(disc, dom_in)
    dom_loss, ddl = cross_entropy(dom_logits, dom_labels)
    d_grads, ddom_in = backward(disc, d_acts, ddl)
    rev = reverse.backward(ddom_in)

    f_grads_s, _ = backward(extractor, acts_s, dfeat_cls + rev[:len(xs)])
    f_grads_t, _ = backward(extractor, acts_t, rev[len(xs):])
    f_grads = [gs + gt for gs, gt in zip(f_grads_s, f_grads_t)]
    return cls_loss, dom_loss, f_grads + c_grads + d_grads


def train_adda(source: DomainDataset, target: UnlabeledDomain,
               cfg: AdversarialConfig) -> AdversarialResult:
    """Two-stage discriminative alignment.

    Stage 1 trains extractor + classifier on the source alone. Stage 2 clones
    the extractor for the target, freezes the source pieces, and alternates
    discriminator steps (source vs target features) with target-extractor
    steps on the label-inverted discriminator loss. Inference composes the
    target extractor with the frozen source classifier.
    """
    target = _require_unlabeled(target)
    if source.dim != target.dim:
        raise ValueError("source and target feature dimensions differ")
    tcfg = cfg.train
    pretrain = cfg.pretrain_epochs if cfg.pretrain_epochs is not None else tcfg.epochs
    adapt = cfg.adapt_epochs if cfg.adapt_epochs is not None else tcfg.epochs
    stage1 = train_erm(source, replace(tcfg, epochs=pretrain))
    source_extractor, classifier = stage1.extractor, stage1.classifier
    n_classes = classifier.out_dim

    streams = seed_streams(tcfg.seed, n=8)
    rng_batch, rng_tgt, rng_disc = streams[5], streams[6], streams[4]
    target_extractor = source_extractor.copy()
    disc = init_mlp([tcfg.hidden_sizes[-1], *cfg.disc_hidden, 2], rng_disc, final="identity")
    disc_blocks = mlp_blocks(disc, "discriminator")
    ext_blocks = mlp_blocks(target_extractor, "target_extractor")
    disc_opt = init_sgd(disc_blocks, tcfg.learning_rate, tcfg.momentum)
    adapt_lr = cfg.adapt_learning_rate if cfg.adapt_learning_rate is not None else tcfg.learning_rate
    ext_opt = init_sgd(ext_blocks, adapt_lr, tcfg.momentum)

    record = RunRecord("adda", tcfg.seed, _record_config(cfg),
                       {"classification": list(stage1.record.epoch_losses["classification"]),
                        "domain": [], "alignment": [], "discriminator_accuracy": []})
    for epoch in range(adapt):
        dom_losses, inv_losses, accs = [], [], []
        for idx in epoch_batches(rng_batch, source.labels, tcfg.batch_size,
                                 tcfg.resample, n_classes):
            xt = target.features[rng_tgt.choice(target.n_samples, size=idx.size)]

            # discriminator step: source features are frozen stage-1 outputs
            feats_s, _ = forward(source_extractor, source.features[idx])
            feats_t, _ = forward(target_extractor, xt)
            dom_in = np.concatenate([feats_s, feats_t], axis=0)
            dom_labels = np.concatenate([np.zeros(idx.size, dtype=np.int64),
                                         np.ones(len(xt), dtype=np.int64)])
            dom_logits, d_acts = forward(disc, dom_in)
            dom_loss, ddl = cross_entropy(dom_logits, dom_labels)
            d_grads, _ = backward(disc, d_acts, ddl)
            accs.append(float(np.mean(np.argmax(dom_logits, axis=1) == dom_labels)))
            sgd_step(disc_blocks, d_grads, disc_opt)

            # target-extractor step: make target features read as source
            feats_t, t_acts = forward(target_extractor, xt)
            inv_logits, d_acts = forward(disc, feats_t)
            inv_loss, ddl = cross_entropy(inv_logits, np.zeros(len(xt), dtype=np.int64))
            _, dfeat = backward(disc, d_acts, ddl)
            t_grads, _ = backward(target_extractor, t_acts, dfeat)
            if not (np.isfinite(dom_loss) and np.isfinite(inv_loss)):
                raise DivergenceError(f"non-finite loss at adaptation epoch {epoch}")
            sgd_step(ext_blocks, t_grads, ext_opt)
            dom_losses.append(dom_loss)
            inv_losses.append(inv_loss)
        epoch_acc = float(np.mean(accs))
        record.epoch_losses["domain"].append(float(np.mean(dom_losses)))
        record.epoch_losses["alignment"].append(float(np.mean(inv_losses)))
        record.epoch_losses["discriminator_accuracy"].append(epoch_acc)
        if epoch_acc > 0.99:
            record.warnings.append(f"discriminator accuracy {epoch_acc:.3f} > 0.99 through epoch {epoch}")
    record.final["classification_loss"] = stage1.record.final["classification_loss"]
    if adapt:
        record.final["domain_loss"] = record.epoch_losses["domain"][-1]
        record.final["discriminator_accuracy"] = record.epoch_losses["discriminator_accuracy"][-1]
    return AdversarialResult(target_extractor, classifier, [disc], record,
                             source_extractor=source_extractor)


def train_mdan(sources: list[DomainDataset], target: UnlabeledDomain,
               cfg: AdversarialConfig) -> AdversarialResult:
    """Multi-source reversal training with soft-max loss aggregation.

    One shared extractor and label predictor train on every source; each
    source k gets its own discriminator against the target. Per-source loss
    e_k = classification_k + domain_weight * domain_k combines through
    soft_aggregate, so harder sources dominate the update.
    """
    if len(sources) < 2:
        raise ValueError("train_mdan needs at least 2 sources; use train_dann for one source")
    target = _require_unlabeled(target)
    dim = sources[0].dim
    if any(s.dim != dim for s in sources) or target.dim != dim:
        raise ValueError("all sources and the target must share one feature dimension")
    tcfg = cfg.train
    n_classes = resolve_n_classes(tcfg, *[s.labels for s in sources])
    rng_init, rng_batch, rng_tgt, rng_disc = seed_streams(tcfg.seed)
    extractor, classifier = build_model(dim, n_classes, tcfg, rng_init)
    discs = [init_mlp([tcfg.hidden_sizes[-1], *cfg.disc_hidden, 2], rng_disc, final="identity")
             for _ in sources]

    blocks = mlp_blocks(extractor, "extractor") + mlp_blocks(classifier, "classifier")
    for k, d in enumerate(discs):
        blocks += mlp_blocks(d, f"discriminator{k}")
    opt = init_sgd(blocks, tcfg.learning_rate, tcfg.momentum)

    steps_per_epoch = -(-max(s.n_samples for s in sources) // tcfg.batch_size)
    total_steps = tcfg.epochs * steps_per_epoch
    loss_keys = {"classification": [], "total": []}
    loss_keys.update({f"domain_{k}": [] for k in range(len(sources))})
    record = RunRecord("mdan", tcfg.seed, _record_config(cfg), loss_keys)

    weights_per_source = [
        None if not tcfg.resample else _balanced_p(s.labels, n_classes)
        for s in sources
    ]
    step = 0
    for epoch in range(tcfg.epochs):
        trace = {k: [] for k in loss_keys}
        for _ in range(steps_per_epoch):
            lam = _domain_weight_at(cfg, step, total_steps)
            xt = target.features[rng_tgt.choice(target.n_samples, size=tcfg.batch_size)]
            batches = []
            for s, p in zip(sources, weights_per_source):
                idx = rng_batch.choice(s.n_samples, size=tcfg.batch_size, replace=True, p=p)
                batches.append((s.features[idx], s.labels[idx]))
            parts, grads = _mdan_step_grads(extractor, classifier, discs, batches, xt,
                                            lam, cfg.gamma, cfg.hard_max)
            if not np.isfinite(parts["total"]):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            sgd_step(blocks, grads, opt)
            for key in trace:
                trace[key].append(parts[key])
            step += 1
        for key in trace:
            record.epoch_losses[key].append(float(np.mean(trace[key])))
    if tcfg.epochs:
        record.final["classification_loss"] = record.epoch_losses["classification"][-1]
        record.final["total_loss"] = record.epoch_losses["total"][-1]
    return AdversarialResult(extractor, classifier, discs, record)


def _balanced_p(labels: np.ndarray, n_classes: int) -> np.ndarray:
    w = weighted_sampler_weights(labels, n_classes)
    return w / w.sum()


def _mdan_step_grads(extractor: Mlp, classifier: Mlp, discs: list[Mlp],
                     batches: list[tuple[np.ndarray, np.ndarray]], xt: np.ndarray,
                     lam: float, gamma: float, hard_max: bool,
                     reverse_domain: bool = True) -> tuple[dict, list[np.ndarray]]:
    """Losses and gradients for one multi-source step.

    Setting reverse_domain=False yields the true gradient of the aggregated
    scalar (used by finite-difference checks); training keeps the reversal on
    so the extractor fights the discriminators.
    """
    feats_t, acts_t = forward(extractor, xt)
    # -1: reversal (extractor fights the discriminators); +1: plain gradient
    sign = -1.0 if reverse_domain else 1.0

    per_source = []
    for (xs, ys), disc in zip(batches, discs):
        feats_s, acts_s = forward(extractor, xs)
        logits, c_acts = forward(classifier, feats_s)
        cls_loss, dlogits = cross_entropy(logits, ys)
        c_grads, dfeat_cls = backward(classifier, c_acts, dlogits)

        dom_in = np.concatenate([feats_s, feats_t], axis=0)
        dom_labels = np.concatenate([np.zeros(len(xs), dtype=np.int64),
                                     np.ones(len(xt), dtype=np.int64)])
        dom_logits, d_acts = forward(disc, dom_in)
        dom_loss, ddl = cross_entropy(dom_logits, dom_labels)
        d_grads, ddom_in = backward(disc, d_acts, ddl)
        per_source.append({
            "cls_loss": cls_loss, "dom_loss": dom_loss, "acts_s": acts_s,
            "c_grads": c_grads, "dfeat_cls": dfeat_cls, "d_grads": d_grads,
            "ddom_in": ddom_in, "n_s": len(xs),
        })

    e = np.array([p["cls_loss"] + lam * p["dom_loss"] for p in per_source])
    if hard_max:
        total = float(e.max())
        w = np.zeros_like(e)
        w[int(np.argmax(e))] = 1.0
    else:
        total = soft_aggregate(e, gamma)
        z = gamma * (e - e.max())
        w = np.exp(z) / np.exp(z).sum()

    ext_grads = None
    cls_grads = None
    disc_grads: list[list[np.ndarray]] = []
    dfeat_t_total = np.zeros_like(feats_t)
    for k, p in enumerate(per_source):
        dfs = p["dfeat_cls"] + sign * lam * p["ddom_in"][:p["n_s"]]
        f_grads_k, _ = backward(extractor, p["acts_s"], w[k] * dfs)
        ext_grads = f_grads_k if ext_grads is None else [a + b for a, b in zip(ext_grads, f_grads_k)]
        cls_k = [w[k] * g for g in p["c_grads"]]
        cls_grads = cls_k if cls_grads is None else [a + b for a, b in zip(cls_grads, cls_k)]
        disc_grads.append([w[k] * lam * g for g in p["d_grads"]])
        dfeat_t_total += w[k] * sign * lam * p["ddom_in"][p["n_s"]:]
    f_grads_t, _ = backward(extractor, acts_t, dfeat_t_total)
    ext_grads = [a + b for a, b in zip(ext_grads, f_grads_t)]

    parts = {"classification": float(np.mean([p["cls_loss"] for p in per_source])),
             "total": total}
    parts.update({f"domain_{k}": per_source[k]["dom_loss"] for k in range(len(per_source))})
    flat = ext_grads + cls_grads
    for dg in disc_grads:
        flat += dg
    return parts, flat


def _record_config(cfg: AdversarialConfig) -> dict:
    payload = cfg.train.to_dict()
    payload.update({
        "domain_weight": cfg.domain_weight,
        "schedule": cfg.schedule,
        "ramp_fraction": cfg.ramp_fraction,
        "disc_hidden": list(cfg.disc_hidden),
        "gamma": cfg.gamma,
        "hard_max": cfg.hard_max,
        "pretrain_epochs": cfg.pretrain_epochs,
        "adapt_epochs": cfg.adapt_epochs,
        "adapt_learning_rate": cfg.adapt_learning_rate,
    })
    return payload
