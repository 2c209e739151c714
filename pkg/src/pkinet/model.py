"""Model state and the shared forward path to logits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .data import SessionLayout
from .ensemble import EnsembleCache, ProjectorEnsemble, ensemble_forward
from .memory import ClassMeanMemory
from .nn import Classifier, NormCache, init_linear_rows, l2_normalize

if TYPE_CHECKING:
    from .trainer import TrainConfig


@dataclass
class ModelState:
    """Everything a session hands to the next one; the unit of checkpointing."""

    ensemble: ProjectorEnsemble
    classifier: Classifier
    memory: ClassMeanMemory
    session: int
    config: "TrainConfig"
    layout: SessionLayout | None = field(default=None)


@dataclass
class FullCache:
    """Caches of the complete embedding -> normalize -> logits pass."""

    ensemble: EnsembleCache
    norm: NormCache
    vhat: np.ndarray


def forward_logits(state: ModelState, f: np.ndarray) -> np.ndarray:
    """Logits = W @ l2_normalize(ensemble(f)) + b, row-wise."""
    logits, _ = forward_logits_cached(state.ensemble, state.classifier, f)
    return logits


def forward_logits_cached(
    ensemble: ProjectorEnsemble, classifier: Classifier, f: np.ndarray
) -> tuple[np.ndarray, FullCache]:
    v, ecache = ensemble_forward(ensemble, f)
    vhat, ncache = l2_normalize(v)
    logits = vhat @ classifier.W.T + classifier.b
    return logits, FullCache(ensemble=ecache, norm=ncache, vhat=np.atleast_2d(vhat))


def expand_classifier(
    classifier: Classifier, new_classes: int, seed: int
) -> Classifier:
    """Append rows for new classes; existing rows and biases are untouched.

    New rows use the projector-output-layer init scheme
    (uniform +-1/sqrt(embedding dim)); new biases are zero.
    """
    if new_classes < 1:
        raise ValueError("new_classes must be >= 1")
    p = classifier.W.shape[1]
    new_rows = init_linear_rows(new_classes, p, seed)
    return Classifier(
        W=np.vstack([classifier.W, new_rows]),
        b=np.concatenate([classifier.b, np.zeros(new_classes)]),
    )
