"""Accuracy over the cumulative label space, aggregates, table emission."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .data import FeatureDataset

if TYPE_CHECKING:
    from .model import ModelState


@dataclass
class AccuracyMatrix:
    """Joint accuracy after each session plus per-origin breakdowns.

    ``per_session[t]`` is the accuracy over the union of test sets 0..t;
    ``per_session_per_origin[t][i]`` restricts it to origin session i's
    classes; ``origin_counts[t][i]`` is that origin's example count. All
    accuracies are fractions in [0, 1].
    """

    per_session: list[float] = field(default_factory=list)
    per_session_per_origin: list[list[float]] = field(default_factory=list)
    origin_counts: list[list[int]] = field(default_factory=list)

    def append_session(
        self, joint: float, per_origin: list[float], counts: list[int]
    ) -> None:
        self.per_session.append(joint)
        self.per_session_per_origin.append(per_origin)
        self.origin_counts.append(counts)

    @property
    def num_sessions(self) -> int:
        return len(self.per_session)

    def average(self) -> float:
        return average_accuracy(self.per_session)


def evaluate_joint(state: "ModelState", test_sets: Sequence[FeatureDataset]) -> float:
    """Fraction of correct argmax predictions over the concatenated sets."""
    joint, _, _ = evaluate_sessions(state, test_sets)
    return joint


def evaluate_sessions(
    state: "ModelState", test_sets: Sequence[FeatureDataset]
) -> tuple[float, list[float], list[int]]:
    """(joint accuracy, per-origin accuracies, per-origin example counts).

    The joint value is computed from the summed correct counts, so it is
    exactly the example-count-weighted mean of the per-origin values.
    """
    from .model import forward_logits

    if not test_sets:
        raise ValueError("at least one test set required")
    C = state.classifier.n_classes
    per_origin: list[float] = []
    counts: list[int] = []
    total_correct = 0
    total = 0
    for ds in test_sets:
        if int(ds.labels.max()) >= C:
            raise ValueError(
                f"test set contains class {int(ds.labels.max())} unseen by the "
                f"model (knows {C} classes)"
            )
        logits = forward_logits(state, ds.features)
        pred = np.argmax(logits, axis=1)  # ties break to the lowest class id
        correct = int((pred == ds.labels).sum())
        per_origin.append(correct / ds.n)
        counts.append(ds.n)
        total_correct += correct
        total += ds.n
    return total_correct / total, per_origin, counts


def average_accuracy(per_session: Sequence[float]) -> float:
    """Arithmetic mean of the per-session accuracies."""
    if len(per_session) == 0:
        raise ValueError("cannot average an empty accuracy list")
    return math.fsum(per_session) / len(per_session)


@dataclass
class Report:
    """Named result rows ready for publication-style table emission."""

    rows: dict[str, AccuracyMatrix] = field(default_factory=dict)

    def add(self, name: str, matrix: AccuracyMatrix) -> None:
        self.rows[name] = matrix

    def averages(self) -> dict[str, float]:
        return {name: m.average() for name, m in self.rows.items()}


def _fmt(value: float) -> str:
    # percent with two decimals; Python's float formatting rounds half-even
    return f"{100.0 * value:.2f}"


def emit_table(
    report: Report, format: str = "csv", reference: str | None = None
) -> str:
    """Render one row per method: per-session accuracy columns plus the
    session average, as percentages with two decimals.

    With ``reference`` set, an improvement column holds the reference
    row's average minus each row's average (the reference row shows "-").
    """
    if format not in ("csv", "markdown", "md"):
        raise ValueError(f"unknown table format {format!r}")
    n_sessions = max((m.num_sessions for m in report.rows.values()), default=0)
    header = ["method"] + [f"s{t}" for t in range(n_sessions)] + ["avg"]
    if reference is not None:
        if reference not in report.rows:
            raise ValueError(f"reference row {reference!r} not in report")
        header.append("avg_improvement")
        ref_avg = report.rows[reference].average()
    lines = [header]
    for name, matrix in report.rows.items():
        cells = [name]
        cells += [_fmt(v) for v in matrix.per_session]
        cells += [""] * (n_sessions - matrix.num_sessions)
        cells.append(_fmt(matrix.average()))
        if reference is not None:
            if name == reference:
                cells.append("-")
            else:
                cells.append(_fmt(ref_avg - matrix.average()))
        lines.append(cells)
    if format == "csv":
        return "\n".join(",".join(row) for row in lines) + "\n"
    width = len(lines[0])
    md = ["| " + " | ".join(lines[0]) + " |", "|" + "---|" * width]
    md += ["| " + " | ".join(row) + " |" for row in lines[1:]]
    return "\n".join(md) + "\n"
