"""Projector ensemble: lifecycle and the three aggregation modes.

One projector is trained per session and frozen afterwards. The modes
differ in how the per-session projectors are combined into the embedding
``v`` and in how much weight storage survives:

* ``pki``    -- every projector is kept; v is the sum of all projector
  *outputs*, with incremental-session outputs scaled by alpha.
* ``pkiv1``  -- only a single running *weight* sum is kept; v is one MLP
  application with effective weights (sum + alpha * current).
* ``pkiv2``  -- frozen weights are summed into disjoint groups of size k
  (session order) plus an open residual group that absorbs the current
  projector; v is one MLP application per materialized group.

Incremental-session weights enter the sums pre-scaled by alpha (the base
session's projector is never scaled), so PKIV forward cost and storage are
independent of the session count. Group sums are materialized at freeze
time, not at forward time.

Aggregation is evaluated as a running sum in session order with alpha
applied per term. That evaluation order makes the structural identities
exact at alpha = 1: pkiv2 with k = 1 reproduces pki bit-for-bit, and
pkiv2 with k > t reproduces pkiv1 bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ProtocolError
from .nn import ForwardCache, Projector, init_projector, mlp_backward, mlp_forward

MODES = ("pki", "pkiv1", "pkiv2")


@dataclass
class ProjectorEnsemble:
    mode: str
    alpha: float
    k: int | None  # group size, pkiv2 only
    session: int
    current: Projector
    current_frozen: bool = False
    # pki storage: one projector per session, session order
    frozen: list[Projector] = field(default_factory=list)
    # pkiv storage: completed k-group sums plus the open residual sum
    completed: list[Projector] = field(default_factory=list)
    residual: Projector | None = None
    residual_count: int = 0

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.current.dims

    def alpha_for(self, session: int) -> float:
        """Base-session weights/features are never alpha-scaled."""
        return 1.0 if session == 0 else self.alpha


def new_ensemble(
    mode: str, projector: Projector, alpha: float = 1.0, k: int | None = None
) -> ProjectorEnsemble:
    """Session-0 ensemble with ``projector`` as the trainable current."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    if mode == "pkiv2":
        if k is None or k < 1:
            raise ValueError("pkiv2 requires group size k >= 1")
    else:
        k = None
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    ens = ProjectorEnsemble(
        mode=mode, alpha=alpha, k=k, session=0, current=projector
    )
    if mode != "pki":
        d, h, p = projector.dims
        res = Projector.zeros(d, h, p)
        res.freeze()
        ens.residual = res
    return ens


def freeze_current(ens: ProjectorEnsemble) -> None:
    """Move the current projector into frozen/group-sum storage.

    Idempotent. In pki mode the projector itself is retained; in pkiv
    modes its (alpha-scaled) weights are accumulated into the open
    residual sum, which rolls into a completed group once it holds k
    weight sets.
    """
    if ens.current_frozen:
        return
    ens.current.freeze()
    if ens.mode == "pki":
        ens.frozen.append(ens.current)
    else:
        new_res = ens.residual.copy()
        new_res.add_scaled(ens.current, ens.alpha_for(ens.session))
        new_res.freeze()
        ens.residual = new_res
        ens.residual_count += 1
        if ens.mode == "pkiv2" and ens.residual_count == ens.k:
            ens.completed.append(ens.residual)
            d, h, p = ens.dims
            empty = Projector.zeros(d, h, p)
            empty.freeze()
            ens.residual = empty
            ens.residual_count = 0
    ens.current_frozen = True


def add_projector(
    ens: ProjectorEnsemble, init_mode: str, seed: int
) -> None:
    """Install a fresh trainable projector and advance the session counter.

    ``random`` draws a new projector from the seed, ``previous`` copies the
    just-frozen one (the init-study alternative).
    """
    if not ens.current_frozen:
        raise ProtocolError(
            "current projector must be frozen before adding a new one"
        )
    d, h, p = ens.dims
    if init_mode == "random":
        new = init_projector(d, h, p, seed)
    elif init_mode == "previous":
        new = ens.current.copy()
    else:
        raise ValueError(f"unknown init_mode {init_mode!r}")
    ens.current = new
    ens.session += 1
    ens.current_frozen = False


@dataclass
class EnsembleCache:
    """Per-unit forward caches plus what backward needs for the chain rule."""

    units: list[Projector]
    caches: list[ForwardCache]
    current_live: bool
    alpha_t: float
    mode: str


def _forward_units(ens: ProjectorEnsemble) -> tuple[list[Projector], list[float]]:
    """Materialized units in session order and their output scales."""
    live = not ens.current_frozen
    if ens.mode == "pki":
        units = list(ens.frozen) + ([ens.current] if live else [])
        scales = [ens.alpha_for(j) for j in range(len(units))]
        return units, scales
    units = list(ens.completed)
    if live:
        open_group = ens.residual.copy()
        open_group.add_scaled(ens.current, ens.alpha_for(ens.session))
        units.append(open_group)
    elif ens.residual_count > 0:
        units.append(ens.residual)
    # weight sums already carry alpha; outputs enter unscaled
    return units, [1.0] * len(units)


def ensemble_forward(
    ens: ProjectorEnsemble, f: np.ndarray
) -> tuple[np.ndarray, EnsembleCache]:
    """Aggregate embedding v for feature rows f, plus backward caches."""
    units, scales = _forward_units(ens)
    v = None
    caches = []
    for unit, scale in zip(units, scales):
        out, cache = mlp_forward(unit, f)
        caches.append(cache)
        term = out if scale == 1.0 else scale * out
        v = term if v is None else v + term
    return v, EnsembleCache(
        units=units,
        caches=caches,
        current_live=not ens.current_frozen,
        alpha_t=ens.alpha_for(ens.session),
        mode=ens.mode,
    )


def ensemble_backward(
    ens: ProjectorEnsemble, ecache: EnsembleCache, dv: np.ndarray
) -> dict[str, np.ndarray]:
    """Gradients of sum(v * dv) w.r.t. the current projector only.

    Frozen projectors and group sums contribute to v but are not trainable,
    so no gradient is produced for them. In pki mode the current unit's
    output is alpha-scaled; in pkiv modes the current's weights enter the
    open group alpha-scaled. Either way the chain rule reduces to one
    alpha factor.
    """
    if not ecache.current_live:
        raise ProtocolError("no trainable projector: current is frozen")
    last_unit = ecache.units[-1]
    last_cache = ecache.caches[-1]
    if ens.mode == "pki":
        dv_eff = dv if ecache.alpha_t == 1.0 else ecache.alpha_t * dv
        grads, _ = mlp_backward(last_unit, last_cache, dv_eff)
        return grads
    grads_eff, _ = mlp_backward(last_unit, last_cache, dv)
    if ecache.alpha_t != 1.0:
        grads_eff = {k: ecache.alpha_t * g for k, g in grads_eff.items()}
    return grads_eff


def effective_weight_groups(ens: ProjectorEnsemble) -> list[Projector]:
    """The materialized group-sum projectors of a weight-compressed mode."""
    if ens.mode == "pki":
        raise ValueError("pki mode keeps per-session projectors, not groups")
    units, _ = _forward_units(ens)
    return units


def materialized_units(ens: ProjectorEnsemble) -> list[tuple[str, Projector]]:
    """Every weight set the ensemble actually stores, with stable names.

    This is the checkpoint inventory: for pki the per-session projectors
    (the current one is listed separately only while trainable, since a
    frozen current *is* the last stored projector); for pkiv modes the
    completed groups, the non-empty residual, and always the current slot
    (kept even after freezing so 'previous' initialization can copy it).
    """
    out: list[tuple[str, Projector]] = []
    if ens.mode == "pki":
        out.extend((f"frozen/{i}", p) for i, p in enumerate(ens.frozen))
        if not ens.current_frozen:
            out.append(("current", ens.current))
    else:
        out.extend((f"group/{i}", p) for i, p in enumerate(ens.completed))
        if ens.residual_count > 0:
            out.append(("residual", ens.residual))
        out.append(("current", ens.current))
    return out


def trainable_params(ens: ProjectorEnsemble) -> dict[str, np.ndarray]:
    if ens.current_frozen:
        raise ProtocolError("current projector is frozen; nothing to train")
    return {f"proj.{k}": v for k, v in ens.current.tensors().items()}


def ensemble_from_projectors(
    projectors: list[Projector],
    mode: str,
    alpha: float = 1.0,
    k: int | None = None,
) -> ProjectorEnsemble:
    """Replay the lifecycle so session j holds exactly ``projectors[j]``.

    The last projector is installed as the live (trainable) current one.
    Useful for constructing comparable states across modes.
    """
    ens = new_ensemble(mode, projectors[0].copy(), alpha=alpha, k=k)
    for proj in projectors[1:]:
        freeze_current(ens)
        add_projector(ens, "random", seed=0)
        ens.current = proj.copy()
    return ens
