"""Feature datasets, session streams, file formats, synthetic generation.

A "feature" here is the frozen backbone's output vector for one example;
this package never sees images. Streams follow the few-shot incremental
protocol: one base session with many examples, then T sessions that each
introduce n_way new classes with k_shot examples per class, label spaces
pairwise disjoint.

File formats (selected by extension):

* ``.pkif`` -- binary, little-endian: magic ``PKIF`` (4 bytes),
  version u16 = 1, dtype u8 = 1 (float64), d u32, n u32, then n records
  of (label u32, d float64 values). Round-trips bit-exactly.
* ``.csv`` / ``.txt`` -- one example per line, ``label,f1,...,fd`` with
  ``repr`` float formatting, which also round-trips exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FeatureFileError, ProtocolError
from .rng import SplitMix64, derive
from .validation import check_feature_matrix, check_label_vector

_MAGIC = b"PKIF"
_HEADER = struct.Struct("<4sHBII")
_VERSION = 1
_DTYPE_F64 = 1


@dataclass
class FeatureDataset:
    """Labeled feature vectors; immutable after construction."""

    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64, non-negative

    def __post_init__(self):
        # Own private copies so freezing never touches caller arrays.
        self.features = check_feature_matrix(self.features, "features").copy()
        self.labels = check_label_vector(
            self.labels, self.features.shape[0], "labels"
        ).copy()
        self.features.flags.writeable = False
        self.labels.flags.writeable = False

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)


@dataclass
class SessionLayout:
    """Class budget of a stream: base_classes + num_incremental * n_way."""

    base_classes: int
    num_incremental: int
    n_way: int
    k_shot: int

    def __post_init__(self):
        for name in ("base_classes", "num_incremental", "n_way", "k_shot"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def total_classes(self) -> int:
        return self.base_classes + self.num_incremental * self.n_way

    @property
    def num_sessions(self) -> int:
        return self.num_incremental + 1

    def classes_of_session(self, t: int) -> range:
        """Dense class-id block of session t (0 = base)."""
        if t == 0:
            return range(self.base_classes)
        lo = self.base_classes + (t - 1) * self.n_way
        return range(lo, lo + self.n_way)


@dataclass
class SynthSpec:
    """Recipe for a synthetic gaussian-cluster stream.

    Each class gets a center drawn uniformly from
    [-center_scale, center_scale]^d; its examples are
    center + N(0, cluster_std^2 I). Fully determined by ``seed``.
    """

    d: int
    layout: SessionLayout
    cluster_std: float = 0.1
    center_scale: float = 5.0
    train_per_base_class: int = 100
    test_per_class: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.cluster_std <= 0:
            raise ValueError("cluster_std must be > 0")
        if self.center_scale <= 0:
            raise ValueError("center_scale must be > 0")
        if self.train_per_base_class < 1 or self.test_per_class < 1:
            raise ValueError("per-class example counts must be >= 1")


@dataclass
class SessionStream:
    """Ordered (train, test) dataset pairs, one per session."""

    sessions: list[tuple[FeatureDataset, FeatureDataset]]
    layout: SessionLayout | None = None
    class_centers: np.ndarray | None = field(default=None, repr=False)

    @property
    def num_sessions(self) -> int:
        return len(self.sessions)

    @property
    def d(self) -> int:
        return self.sessions[0][0].d


def save_feature_file(path: str | Path, dataset: FeatureDataset) -> None:
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".pkif":
        _save_binary(path, dataset)
    elif ext in (".csv", ".txt"):
        _save_text(path, dataset)
    else:
        raise ValueError(f"unknown feature-file extension {ext!r}")


def load_feature_file(path: str | Path) -> FeatureDataset:
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".pkif":
        return _load_binary(path)
    if ext in (".csv", ".txt"):
        return _load_text(path)
    raise ValueError(f"unknown feature-file extension {ext!r}")


def _save_binary(path: Path, dataset: FeatureDataset) -> None:
    if dataset.labels.max() >= 2**32:
        raise ValueError("binary format stores labels as u32")
    rec = np.dtype([("label", "<u4"), ("f", "<f8", (dataset.d,))])
    records = np.empty(dataset.n, dtype=rec)
    records["label"] = dataset.labels.astype(np.uint32)
    records["f"] = dataset.features
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, _DTYPE_F64, dataset.d, dataset.n))
        fh.write(records.tobytes())


def _load_binary(path: Path) -> FeatureDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FeatureFileError(
            f"file too short for header ({len(raw)} bytes)", offset=len(raw)
        )
    magic, version, dtype, d, n = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise FeatureFileError(f"bad magic {magic!r}, expected {_MAGIC!r}", offset=0)
    if version != _VERSION:
        raise FeatureFileError(f"unsupported version {version}", offset=4)
    if dtype != _DTYPE_F64:
        raise FeatureFileError(f"unsupported dtype tag {dtype}", offset=6)
    if d < 1:
        raise FeatureFileError("dimension must be >= 1", offset=7)
    rec_size = 4 + 8 * d
    expected = _HEADER.size + n * rec_size
    if len(raw) < expected:
        complete = (len(raw) - _HEADER.size) // rec_size
        raise FeatureFileError(
            f"truncated: header declares n={n} but only {complete} complete "
            "records present",
            offset=_HEADER.size + complete * rec_size,
        )
    if len(raw) > expected:
        raise FeatureFileError(
            f"{len(raw) - expected} trailing bytes past declared records",
            offset=expected,
        )
    rec = np.dtype([("label", "<u4"), ("f", "<f8", (d,))])
    records = np.frombuffer(raw, dtype=rec, count=n, offset=_HEADER.size)
    return FeatureDataset(
        features=records["f"].astype(np.float64).reshape(n, d),
        labels=records["label"].astype(np.int64),
    )


def _save_text(path: Path, dataset: FeatureDataset) -> None:
    with open(path, "w") as fh:
        for label, row in zip(dataset.labels, dataset.features):
            fh.write(f"{label}," + ",".join(repr(float(x)) for x in row) + "\n")


def _load_text(path: Path) -> FeatureDataset:
    labels: list[int] = []
    rows: list[list[float]] = []
    d = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 2:
                raise FeatureFileError("line has no feature values", offset=lineno)
            try:
                label = int(parts[0])
                row = [float(x) for x in parts[1:]]
            except ValueError as exc:
                raise FeatureFileError(f"unparsable value: {exc}", offset=lineno)
            if d is None:
                d = len(row)
            elif len(row) != d:
                raise FeatureFileError(
                    f"line has {len(row)} values, expected {d}", offset=lineno
                )
            labels.append(label)
            rows.append(row)
    if not rows:
        raise FeatureFileError("file contains no examples", offset=0)
    return FeatureDataset(features=np.array(rows), labels=np.array(labels))


def make_synthetic_stream(spec: SynthSpec) -> SessionStream:
    """Deterministic gaussian-cluster stream obeying ``spec.layout``.

    Substream layout (all derived from ``spec.seed``): class centers come
    from the "centers" stream in class-id order; class c's train and test
    examples come from ("train", c) and ("test", c). Class ids are dense
    in session order: base classes 0..B-1, session t adds the next n_way.
    """
    layout = spec.layout
    centers = SplitMix64(derive(spec.seed, "centers")).uniform(
        -spec.center_scale, spec.center_scale, (layout.total_classes, spec.d)
    )

    def draw(cls: int, purpose: str, count: int) -> np.ndarray:
        rng = SplitMix64(derive(spec.seed, purpose, cls))
        return centers[cls] + rng.normal((count, spec.d), std=spec.cluster_std)

    sessions = []
    for t in range(layout.num_sessions):
        cls_ids = layout.classes_of_session(t)
        n_train = spec.train_per_base_class if t == 0 else layout.k_shot
        train_X, train_y, test_X, test_y = [], [], [], []
        for c in cls_ids:
            train_X.append(draw(c, "train", n_train))
            train_y.append(np.full(n_train, c))
            test_X.append(draw(c, "test", spec.test_per_class))
            test_y.append(np.full(spec.test_per_class, c))
        sessions.append(
            (
                FeatureDataset(np.vstack(train_X), np.concatenate(train_y)),
                FeatureDataset(np.vstack(test_X), np.concatenate(test_y)),
            )
        )
    return SessionStream(sessions=sessions, layout=layout, class_centers=centers)


def validate_stream(stream: SessionStream) -> None:
    """Check every stream invariant; raise ProtocolError on the first hit.

    Checks: consistent feature dimension, pairwise-disjoint train label
    spaces, exact n_way/k_shot shape for incremental sessions, test labels
    confined to the session's own classes, and (when a layout is attached)
    the total class budget.
    """
    if not stream.sessions:
        raise ProtocolError("stream has no sessions")
    d = stream.sessions[0][0].d
    seen: dict[int, int] = {}
    for t, (train, test) in enumerate(stream.sessions):
        for name, ds in (("train", train), ("test", test)):
            if ds.d != d:
                raise ProtocolError(
                    f"session {t} {name} set has dimension {ds.d}, expected {d}"
                )
        for c in train.classes:
            if int(c) in seen:
                raise ProtocolError(
                    f"class {int(c)} appears in sessions {seen[int(c)]} and {t}: "
                    "label spaces must be disjoint"
                )
            seen[int(c)] = t
        if t > 0 and stream.layout is not None:
            counts = {int(c): int((train.labels == c).sum()) for c in train.classes}
            if len(counts) != stream.layout.n_way:
                raise ProtocolError(
                    f"session {t} has {len(counts)} classes, expected "
                    f"{stream.layout.n_way}-way"
                )
            for c, k in counts.items():
                if k != stream.layout.k_shot:
                    raise ProtocolError(
                        f"session {t} class {c} has {k} examples, expected "
                        f"{stream.layout.k_shot}-shot"
                    )
        train_classes = set(int(c) for c in train.classes)
        for c in test.classes:
            if int(c) not in train_classes:
                raise ProtocolError(
                    f"session {t} test set contains class {int(c)} outside the "
                    "session's own label space"
                )
    if stream.layout is not None and len(seen) != stream.layout.total_classes:
        raise ProtocolError(
            f"stream covers {len(seen)} classes, layout declares "
            f"{stream.layout.total_classes}"
        )
