"""Versioned checkpoint container.

A checkpoint is a ``.npz`` archive: one JSON metadata entry (config
snapshot, mode/session bookkeeping, RNG scheme) plus raw float64 arrays
for every materialized weight set, the classifier, the memory, and the
accuracy matrix recorded so far. Arrays round-trip bit-exactly, so a run
resumed from a checkpoint reproduces an uninterrupted run.

All randomness in a run is derived statelessly from the config seed plus
(purpose, session) tags, so the "RNG cursor" needed to resume is just the
seed recorded in the config snapshot.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .data import SessionLayout
from .ensemble import ProjectorEnsemble
from .errors import ProtocolError
from .evaluate import AccuracyMatrix
from .memory import ClassMeanMemory, MemoryEntry
from .model import Classifier, ModelState
from .nn import Projector
from .trainer import TrainConfig

FORMAT_NAME = "pkinet-checkpoint"
FORMAT_VERSION = 1

_TENSORS = ("W1", "b1", "W2", "b2", "W3", "b3")


def _store_projector(arrays: dict, prefix: str, proj: Projector) -> None:
    for name, arr in proj.tensors().items():
        arrays[f"{prefix}/{name}"] = arr


def _read_projector(data, prefix: str) -> Projector:
    return Projector(**{name: data[f"{prefix}/{name}"].copy() for name in _TENSORS})


def save_checkpoint(
    path: str | Path, state: ModelState, accuracy: AccuracyMatrix | None = None
) -> None:
    ens = state.ensemble
    arrays: dict[str, np.ndarray] = {}

    current_shared = ens.mode == "pki" and ens.current_frozen
    if ens.mode == "pki":
        for i, proj in enumerate(ens.frozen):
            _store_projector(arrays, f"ens/frozen/{i}", proj)
        if not current_shared:
            _store_projector(arrays, "ens/current", ens.current)
    else:
        for i, proj in enumerate(ens.completed):
            _store_projector(arrays, f"ens/group/{i}", proj)
        if ens.residual_count > 0:
            _store_projector(arrays, "ens/residual", ens.residual)
        _store_projector(arrays, "ens/current", ens.current)

    arrays["cls/W"] = state.classifier.W
    arrays["cls/b"] = state.classifier.b

    means, ids = state.memory.as_arrays() if len(state.memory) else (
        np.zeros((0, ens.dims[0])),
        np.zeros(0, dtype=np.int64),
    )
    arrays["mem/ids"] = ids
    arrays["mem/means"] = means
    arrays["mem/origins"] = np.array(
        [state.memory.entries[int(c)].session_of_origin for c in ids], dtype=np.int64
    )

    if accuracy is not None:
        arrays["acc/joint"] = np.array(accuracy.per_session, dtype=np.float64)
        for t, (row, counts) in enumerate(
            zip(accuracy.per_session_per_origin, accuracy.origin_counts)
        ):
            arrays[f"acc/origin/{t}"] = np.array(row, dtype=np.float64)
            arrays[f"acc/counts/{t}"] = np.array(counts, dtype=np.int64)

    meta = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": state.config.to_dict(),
        "session": state.session,
        "layout": asdict(state.layout) if state.layout is not None else None,
        "ensemble": {
            "mode": ens.mode,
            "alpha": ens.alpha,
            "k": ens.k,
            "session": ens.session,
            "current_frozen": ens.current_frozen,
            "current_shared": current_shared,
            "n_frozen": len(ens.frozen),
            "n_completed": len(ens.completed),
            "residual_count": ens.residual_count,
        },
        "rng": {"scheme": "splitmix64-derived", "seed": state.config.seed},
        "has_accuracy": accuracy is not None,
    }
    arrays["meta"] = np.frombuffer(
        json.dumps(meta).encode("utf-8"), dtype=np.uint8
    ).copy()
    np.savez(path, **arrays)


def load_checkpoint(
    path: str | Path,
) -> tuple[ModelState, AccuracyMatrix | None]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("format") != FORMAT_NAME:
            raise ProtocolError(f"{path} is not a {FORMAT_NAME} file")
        if meta.get("version") != FORMAT_VERSION:
            raise ProtocolError(f"unsupported checkpoint version {meta.get('version')}")

        cfg = TrainConfig.from_dict(meta["config"])
        em = meta["ensemble"]

        frozen, completed, residual = [], [], None
        if em["mode"] == "pki":
            frozen = [
                _read_projector(data, f"ens/frozen/{i}") for i in range(em["n_frozen"])
            ]
            for proj in frozen:
                proj.freeze()
            if em["current_shared"]:
                current = frozen[-1]
            else:
                current = _read_projector(data, "ens/current")
        else:
            completed = [
                _read_projector(data, f"ens/group/{i}")
                for i in range(em["n_completed"])
            ]
            for proj in completed:
                proj.freeze()
            current = _read_projector(data, "ens/current")
            d, h, p = current.dims
            if em["residual_count"] > 0:
                residual = _read_projector(data, "ens/residual")
            else:
                residual = Projector.zeros(d, h, p)
            residual.freeze()
        if em["current_frozen"]:
            current.freeze()

        ens = ProjectorEnsemble(
            mode=em["mode"],
            alpha=em["alpha"],
            k=em["k"],
            session=em["session"],
            current=current,
            current_frozen=em["current_frozen"],
            frozen=frozen,
            completed=completed,
            residual=residual,
            residual_count=em["residual_count"],
        )

        classifier = Classifier(W=data["cls/W"].copy(), b=data["cls/b"].copy())

        entries: dict[int, MemoryEntry] = {}
        ids = data["mem/ids"]
        means = data["mem/means"]
        origins = data["mem/origins"]
        for i, c in enumerate(ids):
            mean = means[i].copy()
            mean.flags.writeable = False
            entries[int(c)] = MemoryEntry(mean=mean, session_of_origin=int(origins[i]))
        memory = ClassMeanMemory(entries=entries)

        layout = (
            SessionLayout(**meta["layout"]) if meta["layout"] is not None else None
        )
        state = ModelState(
            ensemble=ens,
            classifier=classifier,
            memory=memory,
            session=meta["session"],
            config=cfg,
            layout=layout,
        )

        accuracy = None
        if meta.get("has_accuracy"):
            accuracy = AccuracyMatrix()
            joint = data["acc/joint"]
            for t in range(len(joint)):
                accuracy.append_session(
                    float(joint[t]),
                    [float(x) for x in data[f"acc/origin/{t}"]],
                    [int(x) for x in data[f"acc/counts/{t}"]],
                )
    return state, accuracy
