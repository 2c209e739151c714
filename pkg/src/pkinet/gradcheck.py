"""Finite-difference verification of every trainable gradient.

Builds a random mid-protocol state (several frozen sessions plus a live
projector), evaluates the two-term session loss over random examples and
replayed class means, and compares the analytic gradients of every
trainable tensor against central finite differences.
"""

from __future__ import annotations

import numpy as np

from .ensemble import (
    add_projector,
    ensemble_backward,
    ensemble_forward,
    freeze_current,
    new_ensemble,
    trainable_params,
)
from .nn import (
    Classifier,
    init_linear_rows,
    init_projector,
    l2_normalize,
    l2_normalize_backward,
    softmax_cross_entropy,
)
from .rng import SplitMix64, derive


def finite_difference_check(
    d: int = 8,
    h: int = 8,
    p: int = 8,
    n_classes: int = 6,
    n_examples: int = 4,
    n_memory: int = 3,
    sessions: int = 2,
    mode: str = "pki",
    k: int = 2,
    alpha: float = 1.0,
    seed: int = 0,
    fd_step: float = 1e-5,
) -> dict[str, float]:
    """Max relative gradient error per trainable tensor.

    Relative error is |analytic - fd| / max(|analytic|, |fd|, 1e-4); the
    floor keeps finite-difference round-off noise (~1e-9 absolute here)
    from registering on entries whose true gradient is zero.
    """
    rng = SplitMix64(derive(seed, "gradcheck"))

    ens = new_ensemble(mode, init_projector(d, h, p, derive(seed, "p", 0)),
                       alpha=alpha, k=k)
    for t in range(1, sessions + 1):
        freeze_current(ens)
        add_projector(ens, "random", derive(seed, "p", t))

    classifier = Classifier(
        W=init_linear_rows(n_classes, p, derive(seed, "c")),
        b=rng.normal((n_classes,), std=0.1),
    )

    X = np.vstack(
        [rng.normal((n_examples, d)), rng.normal((n_memory, d))]
    )
    y = rng.uint64(n_examples + n_memory) % n_classes
    y = y.astype(np.int64)

    def loss() -> float:
        v, _ = ensemble_forward(ens, X)
        vhat, _ = l2_normalize(v)
        logits = vhat @ classifier.W.T + classifier.b
        losses, _ = softmax_cross_entropy(logits, y)
        return float(losses.sum())

    # analytic gradients of the summed loss
    v, ecache = ensemble_forward(ens, X)
    vhat, ncache = l2_normalize(v)
    logits = vhat @ classifier.W.T + classifier.b
    _, dlogits = softmax_cross_entropy(logits, y)
    analytic = {
        "cls.W": dlogits.T @ vhat,
        "cls.b": dlogits.sum(axis=0),
    }
    analytic.update(
        {f"proj.{n}": g for n, g in ensemble_backward(ens, ecache,
         l2_normalize_backward(ncache, dlogits @ classifier.W)).items()}
    )

    params = dict(trainable_params(ens))
    params.update({f"cls.{n}": a for n, a in classifier.tensors().items()})

    errors: dict[str, float] = {}
    for name, arr in params.items():
        worst = 0.0
        flat = arr.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + fd_step
            hi = loss()
            flat[i] = orig - fd_step
            lo = loss()
            flat[i] = orig
            fd = (hi - lo) / (2.0 * fd_step)
            denom = max(abs(a_flat[i]), abs(fd), 1e-4)
            worst = max(worst, abs(a_flat[i] - fd) / denom)
        errors[name] = worst
    return errors
