"""Class-mean replay memory.

One mean feature vector per seen class, stored in the backbone-output
space (before any projector). Entries are written once, after the session
that introduced the class, and never touched again: because earlier
projectors are frozen, the old classes' means stay valid for replay. The
means are re-projected through the current ensemble during incremental
training, not cached post-projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import FeatureDataset
from .errors import ProtocolError


@dataclass(frozen=True)
class MemoryEntry:
    mean: np.ndarray  # (d,), read-only
    session_of_origin: int


@dataclass
class ClassMeanMemory:
    """Ordered map class-id -> (mean feature, session that produced it)."""

    entries: dict[int, MemoryEntry] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def class_ids(self) -> list[int]:
        return list(self.entries.keys())

    @property
    def num_sessions(self) -> int:
        if not self.entries:
            return 0
        return 1 + max(e.session_of_origin for e in self.entries.values())

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(means matrix, class-id vector) in insertion order."""
        ids = np.array(self.class_ids, dtype=np.int64)
        means = np.stack([self.entries[int(c)].mean for c in ids])
        return means, ids


def class_means(dataset: FeatureDataset) -> list[tuple[int, np.ndarray]]:
    """Arithmetic mean feature per distinct label, ascending by class id."""
    if dataset.n == 0:
        raise ValueError("cannot compute class means of an empty dataset")
    out = []
    for c in dataset.classes:
        mask = dataset.labels == c
        out.append((int(c), dataset.features[mask].mean(axis=0)))
    return out


def memory_update(
    memory: ClassMeanMemory,
    new_means: list[tuple[int, np.ndarray]],
    session_of_origin: int | None = None,
) -> ClassMeanMemory:
    """Insert new class means; returns a new memory, input left untouched.

    Existing entries must never be overwritten: a colliding class id means
    the session protocol was violated upstream. ``session_of_origin``
    defaults to the number of updates applied so far, which matches the
    one-update-per-session protocol.
    """
    if session_of_origin is None:
        session_of_origin = memory.num_sessions
    entries = dict(memory.entries)
    for c, mean in new_means:
        c = int(c)
        if c in entries:
            raise ProtocolError(
                f"class {c} already has a memory entry (from session "
                f"{entries[c].session_of_origin}); entries are write-once"
            )
        mean = np.array(mean, dtype=np.float64)
        mean.flags.writeable = False
        entries[c] = MemoryEntry(mean=mean, session_of_origin=session_of_origin)
    return ClassMeanMemory(entries=entries)
