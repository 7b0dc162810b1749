"""Concept elicitation, cosine concept scores, and embedding calibration.

For tasks where records are embeddings from an external feature extractor
(images through a vision-language encoder, say), labeling rules cannot read
raw payloads. Instead: ask a model for the visual concepts that separate
the classes, embed those concept descriptions with the same extractor, and
score each record by cosine similarity to each concept. The scores land in
[0, 1] ((cosine + 1) / 2), and score-threshold rule programs take it from
there.

Calibration: when some concepts are known to be spurious (background
correlates rather than the thing itself), their directions are removed
from record embeddings by orthogonal projection before scoring.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import LabelsmithError, Record
from .prompting import (
    RetryPolicy,
    Transport,
    TransportError,
    request_completion,
    response_text,
)

logger = logging.getLogger("labelsmith.concepts")


class ConceptError(LabelsmithError):
    """Concept sets or embedding tables that cannot be used as given."""


@dataclass(frozen=True)
class ConceptSet:
    """Ordered concept descriptions for one task; ``spurious`` marks the
    subset to project away during calibration."""

    task: str
    concepts: tuple[str, ...]
    spurious: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "concepts", tuple(self.concepts))
        object.__setattr__(self, "spurious", tuple(self.spurious))
        if not self.concepts:
            raise ConceptError("a concept set needs at least one concept")
        if len(set(self.concepts)) != len(self.concepts):
            raise ConceptError("concept descriptions must be unique")
        unknown = [s for s in self.spurious if s not in self.concepts]
        if unknown:
            raise ConceptError(f"spurious concept {unknown[0]!r} is not in the concept list")


def save_concepts(path: str | Path, concept_set: ConceptSet) -> Path:
    path = Path(path)
    path.write_text(
        json.dumps(
            {
                "task": concept_set.task,
                "concepts": list(concept_set.concepts),
                "spurious": list(concept_set.spurious),
            },
            indent=2,
            ensure_ascii=False,
        ),
        encoding="utf-8",
    )
    return path


def load_concepts(path: str | Path) -> ConceptSet:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return ConceptSet(
        task=doc["task"],
        concepts=tuple(doc["concepts"]),
        spurious=tuple(doc.get("spurious", ())),
    )


def _json_candidates(text: str):
    yield text
    parts = text.split("```")
    for idx in range(1, len(parts), 2):
        chunk = parts[idx]
        head, sep, rest = chunk.partition("\n")
        yield rest if sep and not head.strip().startswith(("{", "[")) else chunk


def parse_concept_response(task: str, text: str) -> ConceptSet:
    """Concepts from a model reply: either a JSON object mapping concept
    categories to description lists (flattened in order) or a flat JSON
    list. Duplicates are dropped with a warning."""
    doc = None
    for candidate in _json_candidates(text):
        try:
            doc = json.loads(candidate)
            break
        except json.JSONDecodeError:
            continue
    if isinstance(doc, dict):
        flat = [str(d) for descriptions in doc.values() for d in descriptions]
    elif isinstance(doc, list):
        flat = [str(d) for d in doc]
    else:
        raise ConceptError("concept response is not a JSON object or list")
    if not flat:
        raise ConceptError("concept response contains no concepts")
    seen: dict[str, None] = {}
    for concept in flat:
        if concept in seen:
            logger.warning("duplicate concept %r dropped", concept)
        seen.setdefault(concept)
    return ConceptSet(task=task, concepts=tuple(seen))


def elicit_concepts(
    task: str,
    prompt: str,
    model: str,
    transport: Transport,
    *,
    temperature: float = 0.5,
    retry: RetryPolicy | None = None,
    out_dir: str | Path | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> ConceptSet:
    """One completion request for the task's concept list.

    The raw response (or terminal error) is persisted under
    ``<out_dir>/raw/concepts.json`` before parsing, so malformed replies
    remain auditable."""
    retry = retry or RetryPolicy()
    body = {
        "model": model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": temperature,
    }
    artifact_path = None
    if out_dir is not None:
        raw_dir = Path(out_dir) / "raw"
        raw_dir.mkdir(parents=True, exist_ok=True)
        artifact_path = raw_dir / "concepts.json"
    try:
        response, attempts = request_completion(transport, body, retry, sleep)
        artifact = {"request": body, "attempts": attempts, "response": response}
    except TransportError as exc:
        if artifact_path is not None:
            artifact_path.write_text(
                json.dumps({"request": body, "error": str(exc)}, indent=2), encoding="utf-8"
            )
        raise
    if artifact_path is not None:
        artifact_path.write_text(
            json.dumps(artifact, ensure_ascii=False, indent=2, sort_keys=True),
            encoding="utf-8",
        )
    return parse_concept_response(task, response_text(response))


@dataclass(frozen=True)
class EmbeddingTable:
    """Record and concept embeddings in one space.

    ``records`` is n x d, ``concepts`` is C x d, both float64. Concept rows
    must be nonzero (they are directions); record rows may be zero and are
    handled downstream."""

    records: np.ndarray
    concepts: np.ndarray
    concept_names: tuple[str, ...]
    record_ids: tuple[str, ...]

    def __post_init__(self):
        records = np.asarray(self.records, dtype=float)
        concepts = np.asarray(self.concepts, dtype=float)
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "concepts", concepts)
        object.__setattr__(self, "concept_names", tuple(self.concept_names))
        object.__setattr__(self, "record_ids", tuple(self.record_ids))
        if records.ndim != 2 or concepts.ndim != 2:
            raise ConceptError("embeddings must be 2-D matrices")
        if records.shape[1] != concepts.shape[1]:
            raise ConceptError(
                f"dimension mismatch: records are {records.shape[1]}-d, "
                f"concepts are {concepts.shape[1]}-d"
            )
        if len(self.concept_names) != concepts.shape[0]:
            raise ConceptError("concept_names must match concept rows")
        if len(self.record_ids) != records.shape[0]:
            raise ConceptError("record_ids must match record rows")
        if not (np.isfinite(records).all() and np.isfinite(concepts).all()):
            raise ConceptError("embeddings must be finite")
        norms = np.linalg.norm(concepts, axis=1)
        if (norms == 0).any():
            bad = int(np.argmax(norms == 0))
            raise ConceptError(f"concept {self.concept_names[bad]!r} has a zero embedding")
        records.flags.writeable = False
        concepts.flags.writeable = False

    @property
    def n(self) -> int:
        return self.records.shape[0]

    @property
    def C(self) -> int:
        return self.concepts.shape[0]

    @property
    def d(self) -> int:
        return self.records.shape[1]


def scores_from_embeddings(table: EmbeddingTable) -> np.ndarray:
    """(n, C) concept scores: cosine similarity mapped to [0, 1] via
    (s + 1) / 2. Zero-norm records score 0.5 everywhere (logged)."""
    rec_norms = np.linalg.norm(table.records, axis=1)
    con_norms = np.linalg.norm(table.concepts, axis=1)
    zero = rec_norms == 0
    if zero.any():
        logger.warning(
            "%d record embedding(s) have zero norm; their scores default to 0.5",
            int(zero.sum()),
        )
    safe = np.where(zero, 1.0, rec_norms)
    cos = (table.records @ table.concepts.T) / (safe[:, None] * con_norms[None, :])
    cos[zero] = 0.0
    return (cos + 1.0) / 2.0


def _orthogonalized(directions: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt; drops directions that are linearly dependent
    on earlier ones. Makes the subtraction order-invariant."""
    basis: list[np.ndarray] = []
    for row in directions:
        v = row.astype(float).copy()
        norm0 = np.linalg.norm(v)
        if norm0 == 0:
            raise ConceptError("spurious direction has zero norm")
        for b in basis:
            v -= (v @ b) * b
        norm = np.linalg.norm(v)
        if norm > 1e-12 * norm0:
            basis.append(v / norm)
    return np.asarray(basis)


def reject_spurious(
    table: EmbeddingTable, spurious: Sequence[str] | Sequence[int]
) -> EmbeddingTable:
    """Remove the span of the named spurious concept directions from every
    record embedding (concept embeddings stay as they are).

    The directions are orthogonalized first, then each record loses its
    projection onto each: norms never increase, the result is unchanged by
    a second application, and residual dot products with the processed
    directions sit at numerical zero."""
    if len(spurious) == 0:
        return table
    indices = []
    for s in spurious:
        if isinstance(s, str):
            if s not in table.concept_names:
                raise ConceptError(f"spurious concept {s!r} is not in the table")
            indices.append(table.concept_names.index(s))
        else:
            if not (0 <= int(s) < table.C):
                raise ConceptError(f"spurious concept index {s} out of range 0..{table.C - 1}")
            indices.append(int(s))
    basis = _orthogonalized(table.concepts[indices])
    if basis.size == 0:
        return table
    records = table.records.copy()
    for b in basis:
        records -= np.outer(records @ b, b)
    return EmbeddingTable(
        records=records,
        concepts=table.concepts,
        concept_names=table.concept_names,
        record_ids=table.record_ids,
    )


def records_from_scores(table: EmbeddingTable, scores: np.ndarray) -> list[Record]:
    """Score matrix -> scores-modality records, ready for rule programs."""
    if scores.shape != (table.n, table.C):
        raise ConceptError(f"expected a {table.n}x{table.C} score matrix, got {scores.shape}")
    return [
        Record(
            id=rid,
            scores={name: float(scores[i, c]) for c, name in enumerate(table.concept_names)},
        )
        for i, rid in enumerate(table.record_ids)
    ]


def save_embeddings(stem: str | Path, table: EmbeddingTable) -> tuple[Path, Path]:
    """Write ``<stem>.bin`` (row-major float64: n*d record rows, then C*d
    concept rows) and the ``<stem>.json`` sidecar describing the layout."""
    stem = Path(stem)
    bin_path = stem.with_suffix(".bin")
    json_path = stem.with_suffix(".json")
    with bin_path.open("wb") as fh:
        fh.write(np.ascontiguousarray(table.records, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(table.concepts, dtype="<f8").tobytes())
    json_path.write_text(
        json.dumps(
            {
                "n": table.n,
                "C": table.C,
                "d": table.d,
                "concepts": list(table.concept_names),
                "record_ids": list(table.record_ids),
                "dtype": "<f8",
                "layout": "records then concepts, row-major",
            },
            indent=2,
            ensure_ascii=False,
        ),
        encoding="utf-8",
    )
    return bin_path, json_path


def load_embeddings(stem: str | Path) -> EmbeddingTable:
    stem = Path(stem)
    bin_path = stem.with_suffix(".bin")
    json_path = stem.with_suffix(".json")
    try:
        meta = json.loads(json_path.read_text(encoding="utf-8"))
        raw = np.frombuffer(bin_path.read_bytes(), dtype=meta.get("dtype", "<f8"))
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise ConceptError(f"cannot read embeddings {stem}: {exc}") from exc
    n, C, d = int(meta["n"]), int(meta["C"]), int(meta["d"])
    if raw.size != (n + C) * d:
        raise ConceptError(
            f"embeddings file {bin_path} has {raw.size} doubles, expected {(n + C) * d}"
        )
    records = raw[: n * d].reshape(n, d)
    concepts = raw[n * d :].reshape(C, d)
    return EmbeddingTable(
        records=records,
        concepts=concepts,
        concept_names=tuple(meta["concepts"]),
        record_ids=tuple(meta.get("record_ids", [str(i) for i in range(n)])),
    )
