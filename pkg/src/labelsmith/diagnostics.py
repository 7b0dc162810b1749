"""Program-quality diagnostics and group-robustness metrics.

Per-program stats over a vote matrix: coverage (how often it votes),
polarity (which classes it emits), overlap and conflict with other
programs, and empirical accuracy when gold labels exist. Programs whose
coverage falls below a threshold (default 10%) get flagged; the CLI
refuses to aggregate flagged programs unless told otherwise.

All fractions are over the whole dataset, not conditioned on coverage,
so conflict <= overlap <= coverage always holds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import ABSTAIN, LabelsmithError, PseudoLabel, VoteMatrix

DEFAULT_COVERAGE_THRESHOLD = 0.10


class DiagnosticsError(LabelsmithError):
    """Bad inputs to a diagnostics computation."""


@dataclass(frozen=True)
class ProgramStats:
    program_id: str
    coverage: float
    polarity: tuple[int, ...]
    overlap: float
    conflict: float
    empirical_accuracy: float | None
    flagged_low_coverage: bool


@dataclass(frozen=True)
class GroupReport:
    """Overall accuracy, the weakest group, and the gap between them.

    ``average_accuracy`` is record-weighted (not macro over groups);
    ``gap`` is computed from the two reported fields, so the identity
    gap = average - worst holds in exact float arithmetic.
    """

    average_accuracy: float
    worst_group_accuracy: float
    gap: float
    per_group: Mapping[str, float]

    def __post_init__(self):
        object.__setattr__(self, "per_group", dict(self.per_group))


def analyze(
    matrix: VoteMatrix,
    gold: Sequence[int | None] | None = None,
    coverage_threshold: float = DEFAULT_COVERAGE_THRESHOLD,
) -> list[ProgramStats]:
    """Stats for every program (column) of the matrix.

    coverage: fraction of rows with a non-abstain vote. overlap: fraction
    where this program and at least one other both vote. conflict:
    fraction where some other voting program disagrees. polarity: the
    distinct classes emitted. empirical_accuracy: agreement with gold over
    rows where both exist (None without gold).
    """
    if not (0.0 <= coverage_threshold <= 1.0):
        raise DiagnosticsError(f"coverage threshold must be in [0, 1], got {coverage_threshold}")
    votes = matrix.votes
    n, m = votes.shape
    if n == 0:
        raise DiagnosticsError("cannot analyze an empty vote matrix")
    nonabstain = votes != ABSTAIN
    row_votes = nonabstain.sum(axis=1)
    gold_arr = None
    if gold is not None:
        if len(gold) != n:
            raise DiagnosticsError(f"expected {n} gold labels, got {len(gold)}")
        gold_arr = np.array([ABSTAIN if g is None else g for g in gold], dtype=np.int64)
    stats = []
    for j in range(m):
        mask = nonabstain[:, j]
        coverage = float(mask.mean())
        overlap = float((mask & (row_votes >= 2)).mean())
        disagree = (votes != votes[:, j : j + 1]) & nonabstain
        disagree[:, j] = False
        conflict = float((mask & disagree.any(axis=1)).mean())
        polarity = tuple(sorted(int(c) for c in np.unique(votes[mask, j]))) if mask.any() else ()
        accuracy = None
        if gold_arr is not None:
            labeled = mask & (gold_arr != ABSTAIN)
            if labeled.any():
                accuracy = float((votes[labeled, j] == gold_arr[labeled]).mean())
        stats.append(
            ProgramStats(
                program_id=matrix.program_ids[j],
                coverage=coverage,
                polarity=polarity,
                overlap=overlap,
                conflict=conflict,
                empirical_accuracy=accuracy,
                flagged_low_coverage=coverage < coverage_threshold,
            )
        )
    return stats


def coverage_of_label_model(pseudolabels: Sequence[PseudoLabel]) -> float:
    """Fraction of records the aggregate actually labeled."""
    if not pseudolabels:
        raise DiagnosticsError("no pseudolabels given")
    return sum(1 for p in pseudolabels if p.covered) / len(pseudolabels)


def group_metrics(
    predictions: Sequence[int],
    gold: Sequence[int],
    groups: Sequence[str],
) -> GroupReport:
    """Record-weighted overall accuracy, per-group accuracies, the worst
    group, and the gap (average minus worst, exact on the reported floats)."""
    n = len(predictions)
    if not (n == len(gold) == len(groups)):
        raise DiagnosticsError(
            f"length mismatch: {n} predictions, {len(gold)} gold, {len(groups)} groups"
        )
    if n == 0:
        raise DiagnosticsError("no records to evaluate")
    pred = np.asarray(predictions, dtype=np.int64)
    gold_arr = np.asarray(gold, dtype=np.int64)
    correct = pred == gold_arr
    per_group: dict[str, float] = {}
    for g in sorted(set(groups)):
        mask = np.array([x == g for x in groups])
        per_group[g] = float(correct[mask].sum() / mask.sum())
    average = float(correct.sum() / n)
    worst = min(per_group.values())
    return GroupReport(
        average_accuracy=average,
        worst_group_accuracy=worst,
        gap=average - worst,
        per_group=per_group,
    )


def render_stats_table(stats: Sequence[ProgramStats]) -> str:
    """Fixed-width table for terminals; one row per program."""
    headers = ["program", "coverage", "polarity", "overlap", "conflict", "emp_acc", "flag"]
    rows = []
    for s in stats:
        rows.append(
            [
                s.program_id,
                f"{s.coverage:.3f}",
                ",".join(str(c) for c in s.polarity) or "-",
                f"{s.overlap:.3f}",
                f"{s.conflict:.3f}",
                "-" if s.empirical_accuracy is None else f"{s.empirical_accuracy:.3f}",
                "LOW-COVERAGE" if s.flagged_low_coverage else "",
            ]
        )
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
    def line(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    out = [line(headers), line(["-" * w for w in widths])]
    out.extend(line(r) for r in rows)
    return "\n".join(out) + "\n"


def stats_to_json(
    stats: Sequence[ProgramStats], coverage_threshold: float
) -> dict:
    """Machine-readable analyze report (schema documented in docs)."""
    return {
        "coverage_threshold": coverage_threshold,
        "programs": [
            {
                "program_id": s.program_id,
                "coverage": s.coverage,
                "polarity": list(s.polarity),
                "overlap": s.overlap,
                "conflict": s.conflict,
                "empirical_accuracy": s.empirical_accuracy,
                "flagged_low_coverage": s.flagged_low_coverage,
            }
            for s in stats
        ],
        "flagged": [s.program_id for s in stats if s.flagged_low_coverage],
    }


def save_stats(path, stats: Sequence[ProgramStats], coverage_threshold: float):
    from pathlib import Path

    p = Path(path)
    p.write_text(
        json.dumps(stats_to_json(stats, coverage_threshold), indent=2, sort_keys=True),
        encoding="utf-8",
    )
    return p
