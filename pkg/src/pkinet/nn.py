"""Dense-network numerics: projector MLP, normalization, loss, optimizer.

Everything here is float64 and hand-differentiated; there is no autodiff
framework underneath. The projector is a three-layer MLP

    v = W3 @ relu(W2 @ relu(W1 @ f + b1) + b2) + b3

applied row-wise, so ``f`` may be a single vector of length d or a batch
of shape (n, d). Backward passes return exact analytic gradients and are
validated against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVectorError, FrozenParameterError, ProtocolError
from .rng import SplitMix64

NORM_EPS = 1e-12


@dataclass
class Projector:
    """Weights of one three-layer MLP (d -> h -> h -> p)."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.W1.shape[1], self.W1.shape[0], self.W3.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            "W1": self.W1,
            "b1": self.b1,
            "W2": self.W2,
            "b2": self.b2,
            "W3": self.W3,
            "b3": self.b3,
        }

    def copy(self) -> "Projector":
        return Projector(**{k: v.copy() for k, v in self.tensors().items()})

    def freeze(self) -> None:
        """Make all weight arrays read-only; optimizer steps then fail."""
        for arr in self.tensors().values():
            arr.flags.writeable = False

    @property
    def frozen(self) -> bool:
        return not self.W1.flags.writeable

    @classmethod
    def zeros(cls, d: int, h: int, p: int) -> "Projector":
        return cls(
            W1=np.zeros((h, d)),
            b1=np.zeros(h),
            W2=np.zeros((h, h)),
            b2=np.zeros(h),
            W3=np.zeros((p, h)),
            b3=np.zeros(p),
        )

    def add_scaled(self, other: "Projector", scale: float) -> None:
        """In-place ``self += scale * other`` over every tensor."""
        for k, arr in self.tensors().items():
            arr += scale * other.tensors()[k]


@dataclass
class Classifier:
    """Linear classification head over the normalized embedding."""

    W: np.ndarray  # (C, p)
    b: np.ndarray  # (C,)

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    def copy(self) -> "Classifier":
        return Classifier(W=self.W.copy(), b=self.b.copy())


def init_projector(d: int, h: int, p: int, seed: int) -> Projector:
    """Random projector: weights uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)),
    biases zero. Bit-identical for identical (dims, seed).

    Layers are drawn in order W1, W2, W3 from one splitmix64 stream.
    """
    if d < 1 or h < 1 or p < 1:
        raise ValueError(f"projector dims must be >= 1, got d={d} h={h} p={p}")
    rng = SplitMix64(seed)
    bound1 = 1.0 / np.sqrt(d)
    bound2 = 1.0 / np.sqrt(h)
    return Projector(
        W1=rng.uniform(-bound1, bound1, (h, d)),
        b1=np.zeros(h),
        W2=rng.uniform(-bound2, bound2, (h, h)),
        b2=np.zeros(h),
        W3=rng.uniform(-bound2, bound2, (p, h)),
        b3=np.zeros(p),
    )


def init_linear_rows(n_rows: int, fan_in: int, seed: int) -> np.ndarray:
    """Classifier-row init, same scheme as the projector's output layer."""
    rng = SplitMix64(seed)
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, (n_rows, fan_in))


@dataclass
class ForwardCache:
    """Pre-activations remembered by mlp_forward for the backward pass."""

    x: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    squeeze: bool


def _as_rows(f: np.ndarray) -> tuple[np.ndarray, bool]:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 1:
        return f[None, :], True
    if f.ndim == 2:
        return f, False
    raise ValueError(f"expected vector or matrix of rows, got ndim={f.ndim}")


def mlp_forward(proj: Projector, f: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    x, squeeze = _as_rows(f)
    d, _, _ = proj.dims
    if x.shape[1] != d:
        raise ValueError(f"feature dim {x.shape[1]} does not match projector d={d}")
    z1 = x @ proj.W1.T + proj.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ proj.W2.T + proj.b2
    a2 = np.maximum(z2, 0.0)
    v = a2 @ proj.W3.T + proj.b3
    cache = ForwardCache(x=x, z1=z1, a1=a1, z2=z2, a2=a2, squeeze=squeeze)
    return (v[0] if squeeze else v), cache


def mlp_backward(
    proj: Projector, cache: ForwardCache, dv: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact gradients of sum(v * dv) w.r.t. parameters and input.

    ``cache`` must come from a matching mlp_forward call on the same
    projector shape; a mismatch is a state error, not a numeric one.
    """
    d, h, p = proj.dims
    if cache.x.shape[1] != d or cache.z1.shape[1] != h or cache.a2.shape[1] != h:
        raise ProtocolError("forward cache does not match projector shape")
    dv2 = np.asarray(dv, dtype=np.float64)
    if dv2.ndim == 1:
        dv2 = dv2[None, :]
    if dv2.shape != (cache.x.shape[0], p):
        raise ProtocolError(
            f"upstream gradient shape {dv2.shape} does not match cached batch"
        )
    dW3 = dv2.T @ cache.a2
    db3 = dv2.sum(axis=0)
    da2 = dv2 @ proj.W3
    dz2 = da2 * (cache.z2 > 0.0)
    dW2 = dz2.T @ cache.a1
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ proj.W2
    dz1 = da1 * (cache.z1 > 0.0)
    dW1 = dz1.T @ cache.x
    db1 = dz1.sum(axis=0)
    df = dz1 @ proj.W1
    grads = {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2, "W3": dW3, "b3": db3}
    return grads, (df[0] if cache.squeeze else df)


@dataclass
class NormCache:
    v: np.ndarray
    norm: np.ndarray
    squeeze: bool


def l2_normalize(v: np.ndarray) -> tuple[np.ndarray, NormCache]:
    """Row-wise v / ||v||. Aborts on near-zero norm instead of clamping."""
    rows, squeeze = _as_rows(v)
    norm = np.linalg.norm(rows, axis=1)
    if np.any(norm <= NORM_EPS):
        i = int(np.argmax(norm <= NORM_EPS))
        raise DegenerateVectorError(
            f"vector norm {norm[i]:.3e} at row {i} is below {NORM_EPS:.0e}; "
            "projector output has collapsed"
        )
    vhat = rows / norm[:, None]
    cache = NormCache(v=rows, norm=norm, squeeze=squeeze)
    return (vhat[0] if squeeze else vhat), cache


def l2_normalize_backward(cache: NormCache, dvhat: np.ndarray) -> np.ndarray:
    """Jacobian-vector product (I/||v|| - v v^T/||v||^3) @ dvhat, row-wise."""
    g, _ = _as_rows(dvhat)
    n = cache.norm[:, None]
    dot = np.sum(cache.v * g, axis=1, keepdims=True)
    dv = g / n - cache.v * dot / n**3
    return dv[0] if cache.squeeze else dv


def softmax_cross_entropy(
    logits: np.ndarray, y: np.ndarray | int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-example CE loss and its logit gradient, max-shifted for stability.

    Returns (loss, dlogits) where loss has one entry per row (a scalar for
    a single logit vector) and dlogits = softmax(logits) - onehot(y).
    """
    rows, squeeze = _as_rows(logits)
    labels = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if labels.shape[0] != rows.shape[0]:
        raise ValueError("one label per logit row required")
    C = rows.shape[1]
    if np.any(labels < 0) or np.any(labels >= C):
        bad = labels[(labels < 0) | (labels >= C)][0]
        raise ValueError(f"label {bad} outside [0, {C})")
    shifted = rows - rows.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    total = expz.sum(axis=1)
    logsumexp = np.log(total)
    idx = np.arange(rows.shape[0])
    loss = logsumexp - shifted[idx, labels]
    dlogits = expz / total[:, None]
    dlogits[idx, labels] -= 1.0
    if squeeze:
        return loss[0], dlogits[0]
    return loss, dlogits


def cosine_lr(step: int, total: int, lr_max: float, lr_min: float = 0.0) -> float:
    """Cosine annealing from lr_max (step 0) down to lr_min (step total)."""
    if total < 1:
        raise ValueError("total steps must be >= 1")
    if step < 0 or step > total:
        raise ValueError(f"step {step} outside [0, {total}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * step / total))


@dataclass
class OptimizerState:
    """SGD-with-momentum state: one velocity buffer per trainable tensor.

    Velocities are zero-initialized at construction, i.e. at the start of
    every session's training run.
    """

    velocity: dict[str, np.ndarray]
    momentum: float
    lr_max: float
    lr_min: float
    total_steps: int

    @classmethod
    def for_params(
        cls,
        params: dict[str, np.ndarray],
        momentum: float,
        lr_max: float,
        lr_min: float,
        total_steps: int,
    ) -> "OptimizerState":
        vel = {k: np.zeros_like(p) for k, p in params.items()}
        return cls(vel, momentum, lr_max, lr_min, total_steps)


def sgd_momentum_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
) -> None:
    """Heavy-ball update: velocity <- mu*velocity + grad; param -= lr*velocity."""
    for name, p in params.items():
        g = grads[name]
        vel = state.velocity[name]
        if g.shape != p.shape or vel.shape != p.shape:
            raise ValueError(f"shape mismatch on {name}: {p.shape} vs {g.shape}")
        if not p.flags.writeable:
            raise FrozenParameterError(f"parameter {name} is frozen")
        vel *= state.momentum
        vel += g
        p -= lr * vel
