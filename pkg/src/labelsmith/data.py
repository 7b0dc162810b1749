"""Core data model: class spaces, records, vote matrices, and pseudolabels.

Everything downstream (the rule DSL, the label models, diagnostics, the
distiller) speaks in terms of these types. The abstain sentinel is -1
everywhere; class indices run 0..K-1.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

ABSTAIN = -1

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class LabelsmithError(Exception):
    """Base class for every error this package raises on purpose."""


class DatasetError(LabelsmithError):
    """A dataset file or task manifest is malformed."""


class VoteAssemblyError(LabelsmithError):
    """A program cannot be applied to the given records."""


@dataclass(frozen=True)
class ClassSpace:
    """Ordered class names; the index of a name in ``names`` is its class index.

    The abstain sentinel -1 is reserved and never a class index.
    """

    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(names) < 2:
            raise ValueError("a class space needs at least 2 classes")
        if any(not isinstance(n, str) or not n for n in names):
            raise ValueError("class names must be non-empty strings")
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")

    @property
    def K(self) -> int:
        return len(self.names)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown class name {name!r}") from None

    def resolve(self, token: str) -> int | None:
        """Match a class-name token leniently: exact, then case-insensitive,
        then with underscores read as spaces (so COLON_CANCER can name
        "colon cancer"). Returns None when nothing matches."""
        if token in self.names:
            return self.names.index(token)
        folded = token.casefold()
        for i, n in enumerate(self.names):
            if n.casefold() == folded:
                return i
        spaced = folded.replace("_", " ")
        for i, n in enumerate(self.names):
            if n.casefold() == spaced:
                return i
        return None


@dataclass(frozen=True)
class Record:
    """One unlabeled data point.

    Exactly one payload is present: ``text`` for text tasks, or ``scores``
    (concept name -> similarity score) for score tasks. ``gold`` and
    ``group`` are optional and only used for evaluation.
    """

    id: str
    text: str | None = None
    scores: Mapping[str, float] | None = None
    gold: int | None = None
    group: str | None = None

    def __post_init__(self):
        if (self.text is None) == (self.scores is None):
            raise ValueError(
                f"record {self.id!r} must have exactly one of text/scores"
            )
        if self.scores is not None:
            object.__setattr__(self, "scores", dict(self.scores))

    @property
    def modality(self) -> str:
        return "text" if self.text is not None else "scores"


@dataclass(frozen=True)
class VoteMatrix:
    """n x m integer matrix of program outputs.

    Row i follows record order, column j follows ``program_ids``. Entries
    are class indices or ABSTAIN (-1).
    """

    votes: np.ndarray
    program_ids: tuple[str, ...]
    record_ids: tuple[str, ...]

    def __post_init__(self):
        votes = np.asarray(self.votes, dtype=np.int64)
        if votes.ndim != 2:
            raise ValueError("votes must be a 2-D array")
        object.__setattr__(self, "votes", votes)
        object.__setattr__(self, "program_ids", tuple(self.program_ids))
        object.__setattr__(self, "record_ids", tuple(self.record_ids))
        if votes.shape[1] != len(self.program_ids):
            raise ValueError("votes columns must match program_ids")
        if votes.shape[0] != len(self.record_ids):
            raise ValueError("votes rows must match record_ids")
        if len(set(self.program_ids)) != len(self.program_ids):
            raise ValueError("program_ids must be unique")
        if len(set(self.record_ids)) != len(self.record_ids):
            raise ValueError("record_ids must be unique")
        if votes.size and votes.min() < ABSTAIN:
            raise ValueError("votes must be class indices or ABSTAIN (-1)")
        votes.flags.writeable = False

    @property
    def n(self) -> int:
        return self.votes.shape[0]

    @property
    def m(self) -> int:
        return self.votes.shape[1]


@dataclass(frozen=True)
class PseudoLabel:
    """Aggregated label for one record: a posterior over classes plus the
    hard argmax label. ``covered`` is False iff every program abstained."""

    record_id: str
    posterior: tuple[float, ...]
    hard: int
    covered: bool

    @classmethod
    def from_posterior(cls, record_id: str, posterior, covered: bool) -> "PseudoLabel":
        post = np.asarray(posterior, dtype=float)
        # argmax returns the smallest index among ties, which is the contract
        return cls(
            record_id=record_id,
            posterior=tuple(float(p) for p in post),
            hard=int(np.argmax(post)),
            covered=bool(covered),
        )


@dataclass(frozen=True)
class TaskManifest:
    """Where a task's data lives and how to read it."""

    name: str
    class_space: ClassSpace
    modality: str
    dataset: Path
    validation: Path | None = None
    concepts: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.modality not in ("text", "scores"):
            raise ValueError(f"unknown modality {self.modality!r}")
        object.__setattr__(self, "dataset", Path(self.dataset))
        if self.validation is not None:
            object.__setattr__(self, "validation", Path(self.validation))
        if self.concepts is not None:
            object.__setattr__(self, "concepts", tuple(self.concepts))


def load_manifest(path: str | Path) -> TaskManifest:
    """Read a task manifest (JSON) and check the referenced files exist.

    Relative dataset paths are resolved against the manifest's directory.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from exc
    for key in ("name", "classes", "modality", "dataset"):
        if key not in doc:
            raise DatasetError(f"manifest {path} is missing {key!r}")
    base = path.parent

    def _resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    dataset = _resolve(doc["dataset"])
    if not dataset.exists():
        raise DatasetError(f"dataset file not found: {dataset}")
    validation = None
    if doc.get("validation"):
        validation = _resolve(doc["validation"])
        if not validation.exists():
            raise DatasetError(f"validation file not found: {validation}")
    return TaskManifest(
        name=doc["name"],
        class_space=ClassSpace(tuple(doc["classes"])),
        modality=doc["modality"],
        dataset=dataset,
        validation=validation,
        concepts=tuple(doc["concepts"]) if doc.get("concepts") else None,
    )


def _check_gold(gold, K: int, lineno: int):
    if gold is None:
        return None
    if not isinstance(gold, int) or isinstance(gold, bool) or not (0 <= gold < K):
        raise DatasetError(f"line {lineno}: gold label {gold!r} not in 0..{K - 1}")
    return gold


def _load_text_jsonl(path: Path, K: int) -> list[Record]:
    records = []
    seen = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
                raise DatasetError(f"line {lineno}: expected an object with id and text")
            rid = str(obj["id"])
            if rid in seen:
                raise DatasetError(f"line {lineno}: duplicate record id {rid!r}")
            seen.add(rid)
            records.append(
                Record(
                    id=rid,
                    text=str(obj["text"]),
                    gold=_check_gold(obj.get("gold"), K, lineno),
                    group=str(obj["group"]) if obj.get("group") is not None else None,
                )
            )
    return records


def _check_concepts(found: Sequence[str], expected: Sequence[str] | None, where: str):
    if expected is None:
        return
    missing = [c for c in expected if c not in found]
    extra = [c for c in found if c not in expected]
    if missing:
        raise DatasetError(f"{where}: missing score column {missing[0]!r}")
    if extra:
        raise DatasetError(f"{where}: unexpected score column {extra[0]!r}")


def _load_scores_csv(path: Path, K: int, concepts) -> list[Record]:
    records = []
    seen = set()
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError("line 1: empty scores file") from None
        if not header or header[0] != "id":
            raise DatasetError("line 1: scores CSV must start with an 'id' column")
        tail = [c for c in header[1:] if c in ("gold", "group")]
        score_cols = header[1 : len(header) - len(tail)]
        if any(c in ("gold", "group") for c in score_cols):
            raise DatasetError("line 1: gold/group columns must come last")
        _check_concepts(score_cols, concepts, "line 1")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            rid = row[0]
            if rid in seen:
                raise DatasetError(f"line {lineno}: duplicate record id {rid!r}")
            seen.add(rid)
            try:
                scores = {c: float(v) for c, v in zip(score_cols, row[1:])}
            except ValueError as exc:
                raise DatasetError(f"line {lineno}: bad score value ({exc})") from exc
            if any(not math.isfinite(v) for v in scores.values()):
                raise DatasetError(f"line {lineno}: non-finite score")
            gold = group = None
            for name, value in zip(header[1 + len(score_cols) :], row[1 + len(score_cols) :]):
                if name == "gold" and value != "":
                    try:
                        gold = _check_gold(int(value), K, lineno)
                    except ValueError:
                        raise DatasetError(f"line {lineno}: bad gold value {value!r}") from None
                elif name == "group" and value != "":
                    group = value
            records.append(Record(id=rid, scores=scores, gold=gold, group=group))
    return records


def _load_scores_jsonl(path: Path, K: int, concepts) -> list[Record]:
    records = []
    seen = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or "id" not in obj or "scores" not in obj:
                raise DatasetError(f"line {lineno}: expected an object with id and scores")
            rid = str(obj["id"])
            if rid in seen:
                raise DatasetError(f"line {lineno}: duplicate record id {rid!r}")
            seen.add(rid)
            scores = obj["scores"]
            if not isinstance(scores, dict):
                raise DatasetError(f"line {lineno}: scores must be an object")
            _check_concepts(list(scores), concepts, f"line {lineno}")
            records.append(
                Record(
                    id=rid,
                    scores={k: float(v) for k, v in scores.items()},
                    gold=_check_gold(obj.get("gold"), K, lineno),
                    group=str(obj["group"]) if obj.get("group") is not None else None,
                )
            )
    return records


def load_dataset(path: str | Path, manifest: TaskManifest) -> list[Record]:
    """Load records in file order.

    Text tasks read JSONL ({"id", "text", "gold"?, "group"?}); score tasks
    read CSV (header id,<concepts...>[,gold][,group]) or the JSONL
    equivalent with a "scores" object. Errors carry 1-based line numbers.
    """
    path = Path(path)
    K = manifest.class_space.K
    if manifest.modality == "text":
        return _load_text_jsonl(path, K)
    if path.suffix.lower() == ".csv":
        return _load_scores_csv(path, K, manifest.concepts)
    return _load_scores_jsonl(path, K, manifest.concepts)


def serialize_records(records: Iterable[Record], path: str | Path) -> Path:
    """Write records back out in the format ``load_dataset`` reads (JSONL).

    Round-trips: loading the written file yields equal records.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            obj: dict = {"id": rec.id}
            if rec.text is not None:
                obj["text"] = rec.text
            else:
                obj["scores"] = rec.scores
            if rec.gold is not None:
                obj["gold"] = rec.gold
            if rec.group is not None:
                obj["group"] = rec.group
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
    return path


def assemble_votes(records: Sequence[Record], programs: Sequence) -> VoteMatrix:
    """Apply every program to every record; votes[i][j] is program j's vote
    on record i. Evaluation is sequential and order-stable, so two runs on
    identical inputs produce identical matrices."""
    from .dsl import evaluate  # local import: dsl depends on this module

    for prog in programs:
        bad = next((r for r in records if r.modality != prog.modality), None)
        if bad is not None:
            raise VoteAssemblyError(
                f"program {prog.id!r} expects {prog.modality} records but "
                f"record {bad.id!r} is {bad.modality}"
            )
    n, m = len(records), len(programs)
    votes = np.full((n, m), ABSTAIN, dtype=np.int64)
    for j, prog in enumerate(programs):
        for i, rec in enumerate(records):
            votes[i, j] = evaluate(prog, rec)
    return VoteMatrix(
        votes=votes,
        program_ids=tuple(p.id for p in programs),
        record_ids=tuple(r.id for r in records),
    )


def save_votes(
    path: str | Path,
    matrix: VoteMatrix,
    class_names: Sequence[str],
    task: str | None = None,
    gold: Sequence[int | None] | None = None,
    groups: Sequence[str | None] | None = None,
) -> Path:
    """Write a vote matrix (plus optional gold/group columns) as JSON."""
    doc = {
        "task": task,
        "classes": list(class_names),
        "program_ids": list(matrix.program_ids),
        "record_ids": list(matrix.record_ids),
        "votes": matrix.votes.tolist(),
        "gold": list(gold) if gold is not None else None,
        "group": list(groups) if groups is not None else None,
    }
    path = Path(path)
    path.write_text(json.dumps(doc, ensure_ascii=False, indent=None, sort_keys=True), encoding="utf-8")
    return path


def load_votes(path: str | Path) -> tuple[VoteMatrix, dict]:
    """Read a vote matrix file; returns the matrix and its metadata
    (classes, task, optional gold/group lists)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read votes file {path}: {exc}") from exc
    for key in ("classes", "program_ids", "record_ids", "votes"):
        if key not in doc:
            raise DatasetError(f"votes file {path} is missing {key!r}")
    matrix = VoteMatrix(
        votes=np.asarray(doc["votes"], dtype=np.int64),
        program_ids=tuple(doc["program_ids"]),
        record_ids=tuple(doc["record_ids"]),
    )
    K = len(doc["classes"])
    if matrix.votes.size and matrix.votes.max() >= K:
        raise DatasetError(f"votes file {path} has votes outside 0..{K - 1}")
    meta = {
        "task": doc.get("task"),
        "classes": list(doc["classes"]),
        "gold": doc.get("gold"),
        "group": doc.get("group"),
    }
    return matrix, meta


def save_pseudolabels(path: str | Path, labels: Iterable[PseudoLabel]) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for lab in labels:
            fh.write(
                json.dumps(
                    {
                        "record_id": lab.record_id,
                        "posterior": list(lab.posterior),
                        "hard": lab.hard,
                        "covered": lab.covered,
                    }
                )
                + "\n"
            )
    return path


def load_pseudolabels(path: str | Path) -> list[PseudoLabel]:
    labels = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
            labels.append(
                PseudoLabel(
                    record_id=obj["record_id"],
                    posterior=tuple(obj["posterior"]),
                    hard=int(obj["hard"]),
                    covered=bool(obj["covered"]),
                )
            )
    return labels
