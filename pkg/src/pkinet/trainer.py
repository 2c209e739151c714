"""The two-phase training protocol.

Base session: projector 0 and the classifier are trained jointly by
seeded mini-batch SGD with cross-entropy over the normalized embedding;
afterwards the projector is frozen and the class-mean memory is created.

Incremental session t: a new projector is added (random or previous
init), the classifier gains rows for the session's classes, and for a
fixed number of full-batch iterations the loss is a two-term
objective: CE summed over the session's examples plus CE summed over
every stored class mean re-projected through the current ensemble. Only
the new projector and the classifier receive gradients. Afterwards the
projector is frozen and the new class means enter the memory.

Learning rate follows cosine annealing in both phases; momentum buffers
restart at zero every session.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Callable

import numpy as np

from .data import FeatureDataset, SessionStream, validate_stream
from .ensemble import (
    ProjectorEnsemble,
    add_projector,
    ensemble_backward,
    freeze_current,
    new_ensemble,
    trainable_params,
)
from .errors import ProtocolError
from .evaluate import AccuracyMatrix, evaluate_sessions
from .memory import ClassMeanMemory, class_means, memory_update
from .model import ModelState, expand_classifier, forward_logits_cached
from .nn import (
    Classifier,
    OptimizerState,
    cosine_lr,
    init_linear_rows,
    init_projector,
    l2_normalize_backward,
    sgd_momentum_step,
    softmax_cross_entropy,
)
from .rng import SplitMix64, derive

CONFIG_SCHEMA_VERSION = 1

IterationCallback = Callable[[dict], None]


@dataclass
class TrainConfig:
    """Hyperparameters for a full protocol run."""

    mode: str = "pki"
    k: int = 3
    alpha: float = 1.0
    base_epochs: int = 100
    incr_iters: int = 150
    batch_size: int = 512
    lr_max: float = 0.25
    lr_min: float = 0.0
    momentum: float = 0.9
    hidden_dim: int | None = None  # defaults to the feature dim
    embed_dim: int | None = None  # defaults to the feature dim
    init_mode: str = "random"
    loss_reduction: str = "sum"  # two-term loss: plain sums or per-term means
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("pki", "pkiv1", "pkiv2"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "pkiv2" and self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if self.base_epochs < 0 or self.incr_iters < 1:
            raise ValueError("base_epochs must be >= 0 and incr_iters >= 1")
        if self.incr_iters > 100_000:
            raise ValueError("incr_iters out of supported range (1..100000)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_max <= 0 or self.lr_min < 0 or self.lr_min > self.lr_max:
            raise ValueError("require lr_max > 0 and 0 <= lr_min <= lr_max")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.init_mode not in ("random", "previous"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")
        if self.loss_reduction not in ("sum", "mean"):
            raise ValueError(f"unknown loss_reduction {self.loss_reduction!r}")

    def to_dict(self) -> dict:
        out = {"schema_version": CONFIG_SCHEMA_VERSION}
        out.update(asdict(self))
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        version = raw.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema_version {version}")
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


def _loss_and_grads(
    ensemble: ProjectorEnsemble,
    classifier: Classifier,
    X: np.ndarray,
    y: np.ndarray,
    row_weights: np.ndarray,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Weighted-CE losses over rows of X and gradients for the trainable set.

    ``row_weights`` implements the reduction: all-ones for plain sums,
    1/per-term counts for mean reduction. Returned losses are unweighted
    per-row values; gradients include the weights.
    """
    logits, cache = forward_logits_cached(ensemble, classifier, X)
    losses, dlogits = softmax_cross_entropy(logits, y)
    dlogits = dlogits * row_weights[:, None]
    grads = {
        "cls.W": dlogits.T @ cache.vhat,
        "cls.b": dlogits.sum(axis=0),
    }
    dvhat = dlogits @ classifier.W
    dv = l2_normalize_backward(cache.norm, dvhat)
    proj_grads = ensemble_backward(ensemble, cache.ensemble, dv)
    grads.update({f"proj.{k}": g for k, g in proj_grads.items()})
    return losses, grads


def base_train(
    D0: FeatureDataset,
    cfg: TrainConfig,
    on_epoch: IterationCallback | None = None,
) -> ModelState:
    """Train projector 0 and the classifier on the base session.

    Requires dense base labels 0..B-1. Returns the frozen session-0 state
    with the memory initialized from the base class means (memory creation
    happens even when base_epochs is 0).
    """
    classes = D0.classes
    B = len(classes)
    if classes[0] != 0 or classes[-1] != B - 1:
        raise ProtocolError(
            f"base classes must be dense 0..{B - 1}, got {classes.tolist()[:8]}..."
        )
    d = D0.d
    h = cfg.hidden_dim or d
    p = cfg.embed_dim or d

    proj = init_projector(d, h, p, derive(cfg.seed, "proj-init", 0))
    classifier = Classifier(
        W=init_linear_rows(B, p, derive(cfg.seed, "cls-init", 0)),
        b=np.zeros(B),
    )
    ensemble = new_ensemble(cfg.mode, proj, alpha=cfg.alpha, k=cfg.k)

    batch = min(cfg.batch_size, D0.n)
    steps_per_epoch = math.ceil(D0.n / batch)
    total_steps = max(1, cfg.base_epochs * steps_per_epoch)
    params = dict(trainable_params(ensemble))
    params.update({f"cls.{k}": v for k, v in classifier.tensors().items()})
    opt = OptimizerState.for_params(
        params, cfg.momentum, cfg.lr_max, cfg.lr_min, total_steps
    )
    shuffle_rng = SplitMix64(derive(cfg.seed, "shuffle", 0))

    step = 0
    for epoch in range(cfg.base_epochs):
        order = shuffle_rng.shuffled_indices(D0.n)
        epoch_loss = 0.0
        for start in range(0, D0.n, batch):
            idx = order[start : start + batch]
            X, y = D0.features[idx], D0.labels[idx]
            weights = np.full(len(idx), 1.0 / len(idx))  # batch-mean CE
            losses, grads = _loss_and_grads(ensemble, classifier, X, y, weights)
            lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min)
            sgd_momentum_step(params, grads, opt, lr)
            epoch_loss += float(losses.mean()) * len(idx)
            step += 1
        if on_epoch is not None:
            on_epoch({"epoch": epoch, "mean_loss": epoch_loss / D0.n})

    freeze_current(ensemble)
    memory = memory_update(ClassMeanMemory(), class_means(D0), session_of_origin=0)
    return ModelState(
        ensemble=ensemble,
        classifier=classifier,
        memory=memory,
        session=0,
        config=cfg,
    )


def _clone_ensemble(ens: ProjectorEnsemble) -> ProjectorEnsemble:
    """Fresh ensemble value sharing the (immutable) frozen weight storage."""
    return replace(
        ens,
        frozen=list(ens.frozen),
        completed=list(ens.completed),
    )


def _begin_incremental(
    state: ModelState, Dt: FeatureDataset, cfg: TrainConfig
) -> tuple[ProjectorEnsemble, Classifier, int]:
    """Session setup: protocol checks, projector add, classifier growth."""
    if not state.ensemble.current_frozen:
        raise ProtocolError(
            "previous session's projector must be frozen before a new session"
        )
    if Dt.d != state.ensemble.dims[0]:
        raise ProtocolError(
            f"session data dimension {Dt.d} does not match model {state.ensemble.dims[0]}"
        )
    seen = set(state.memory.class_ids)
    new_classes = [int(c) for c in Dt.classes]
    overlap = seen.intersection(new_classes)
    if overlap:
        raise ProtocolError(
            f"session classes overlap already-seen classes: {sorted(overlap)[:5]}"
        )
    C = state.classifier.n_classes
    expected = list(range(C, C + len(new_classes)))
    if new_classes != expected:
        raise ProtocolError(
            f"class ids must continue densely ({expected[:5]}...), got "
            f"{new_classes[:5]}..."
        )
    t = state.session + 1
    ensemble = _clone_ensemble(state.ensemble)
    add_projector(ensemble, cfg.init_mode, derive(cfg.seed, "proj-init", t))
    classifier = expand_classifier(
        state.classifier, len(new_classes), derive(cfg.seed, "cls-init", t)
    )
    return ensemble, classifier, t


def incremental_train(
    state: ModelState,
    Dt: FeatureDataset,
    cfg: TrainConfig,
    on_iteration: IterationCallback | None = None,
) -> ModelState:
    """Run one incremental session and return the next state.

    Every iteration is one full-batch step over the session's examples
    plus every memory mean, each mean re-projected through the live
    ensemble. Gradients reach only the new projector and the classifier.
    """
    ensemble, classifier, t = _begin_incremental(state, Dt, cfg)

    means, mean_ids = state.memory.as_arrays()
    X = np.vstack([Dt.features, means])
    y = np.concatenate([Dt.labels, mean_ids])
    n_ex, n_mem = Dt.n, len(mean_ids)
    if cfg.loss_reduction == "mean":
        weights = np.concatenate(
            [np.full(n_ex, 1.0 / n_ex), np.full(n_mem, 1.0 / n_mem)]
        )
    else:
        weights = np.ones(n_ex + n_mem)

    params = dict(trainable_params(ensemble))
    params.update({f"cls.{k}": v for k, v in classifier.tensors().items()})
    opt = OptimizerState.for_params(
        params, cfg.momentum, cfg.lr_max, cfg.lr_min, cfg.incr_iters
    )

    for i in range(cfg.incr_iters):
        losses, grads = _loss_and_grads(ensemble, classifier, X, y, weights)
        lr = cosine_lr(i, cfg.incr_iters, cfg.lr_max, cfg.lr_min)
        if on_iteration is not None:
            loss_examples = float((losses[:n_ex] * weights[:n_ex]).sum())
            loss_memory = float((losses[n_ex:] * weights[n_ex:]).sum())
            on_iteration(
                {
                    "session": t,
                    "iteration": i,
                    "loss_examples": loss_examples,
                    "loss_memory": loss_memory,
                    "loss_total": loss_examples + loss_memory,
                    "n_memory_terms": n_mem,
                    "lr": lr,
                }
            )
        sgd_momentum_step(params, grads, opt, lr)

    freeze_current(ensemble)
    memory = memory_update(state.memory, class_means(Dt), session_of_origin=t)
    return ModelState(
        ensemble=ensemble,
        classifier=classifier,
        memory=memory,
        session=t,
        config=cfg,
        layout=state.layout,
    )


SessionCallback = Callable[[int, ModelState, AccuracyMatrix], None]


def run_protocol(
    stream: SessionStream,
    cfg: TrainConfig,
    on_session: SessionCallback | None = None,
    resume_state: ModelState | None = None,
    resume_accuracy: AccuracyMatrix | None = None,
) -> tuple[ModelState, AccuracyMatrix]:
    """Base training then every incremental session, evaluating after each.

    Evaluation after session t covers the union of test sets 0..t. With
    ``resume_state`` (and its matching ``resume_accuracy``) the run
    continues after that state's session, reproducing an uninterrupted
    run bit-for-bit.
    """
    validate_stream(stream)
    tests = [test for _, test in stream.sessions]

    if resume_state is None:
        state = base_train(stream.sessions[0][0], cfg)
        state.layout = stream.layout
        acc = AccuracyMatrix()
        acc.append_session(*evaluate_sessions(state, tests[:1]))
        if on_session is not None:
            on_session(0, state, acc)
    else:
        state = resume_state
        if state.config != cfg:
            raise ProtocolError(
                "resume config differs from the checkpointed config; a resumed "
                "run must reuse the original one to stay bit-identical"
            )
        if resume_accuracy is None or len(resume_accuracy.per_session) != state.session + 1:
            raise ProtocolError(
                "resume requires the accuracy matrix recorded with the checkpoint"
            )
        acc = resume_accuracy

    for t in range(state.session + 1, stream.num_sessions):
        state = incremental_train(state, stream.sessions[t][0], cfg)
        acc.append_session(*evaluate_sessions(state, tests[: t + 1]))
        if on_session is not None:
            on_session(t, state, acc)
    return state, acc
