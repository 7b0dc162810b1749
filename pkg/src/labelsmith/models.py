"""Label models: turn a vote matrix into pseudolabels.

Five aggregators over the same VoteMatrix:

- majority vote and weighted majority vote (counting),
- Dawid-Skene EM with full per-program confusion matrices,
- a one-coin EM ("snorkel_lite") where each program has a single accuracy
  and errors spread uniformly over wrong classes,
- a moment-based triplet estimator for binary tasks (no EM; latent
  accuracies from products of pairwise agreement rates).

Abstains are treated as missing at random: they never enter a likelihood,
and each program's abstain propensity is recorded separately. All fits are
deterministic; EM initializes from smoothed majority vote.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ABSTAIN, LabelsmithError, PseudoLabel, VoteMatrix

MV = "MV"
WMV = "WMV"
DAWID_SKENE = "DawidSkene"
TRIPLET = "Triplet"
SNORKEL_LITE = "SnorkelLite"

KINDS = (MV, WMV, DAWID_SKENE, TRIPLET, SNORKEL_LITE)

DEFAULT_SMOOTHING = 0.01
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 200
DEFAULT_CLAMP = (0.05, 0.95)
DEFAULT_MIN_PAIRS = 10

# pairwise agreement rates below this magnitude carry no usable signal
# as triplet denominators; such triplets are skipped
_MIN_DENOMINATOR = 0.05


class ModelError(LabelsmithError):
    """A label model cannot be fitted or applied to the given votes."""


@dataclass(frozen=True)
class LabelModelParams:
    """Fitted reliability parameters, one container for every model kind.

    ``confusion[j][k, c]`` is P(program j votes c | true class k), rows
    conditioned on a non-abstain vote. ``accuracies`` is set for the
    scalar-parameter kinds; ``weights`` is what vote counting uses for
    WMV/Triplet. ``propensity[j]`` is the empirical non-abstain rate,
    recorded for reporting and never used in posteriors.
    """

    kind: str
    priors: np.ndarray
    program_ids: tuple[str, ...]
    confusion: np.ndarray | None = None
    accuracies: np.ndarray | None = None
    weights: np.ndarray | None = None
    propensity: np.ndarray | None = None
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}")
        object.__setattr__(self, "priors", np.asarray(self.priors, dtype=float))
        object.__setattr__(self, "program_ids", tuple(self.program_ids))
        for name in ("confusion", "accuracies", "weights", "propensity"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, np.asarray(value, dtype=float))
        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(self.class_names))
        if abs(self.priors.sum() - 1.0) > 1e-9:
            raise ModelError("priors must sum to 1")
        if self.confusion is not None:
            rows = self.confusion.sum(axis=2)
            if not np.allclose(rows, 1.0, atol=1e-9):
                raise ModelError("confusion rows must sum to 1")

    @property
    def K(self) -> int:
        return len(self.priors)

    @property
    def m(self) -> int:
        return len(self.program_ids)

    def to_dict(self) -> dict:
        def arr(x):
            return None if x is None else np.asarray(x).tolist()

        return {
            "kind": self.kind,
            "priors": arr(self.priors),
            "program_ids": list(self.program_ids),
            "confusion": arr(self.confusion),
            "accuracies": arr(self.accuracies),
            "weights": arr(self.weights),
            "propensity": arr(self.propensity),
            "class_names": list(self.class_names) if self.class_names else None,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LabelModelParams":
        def arr(x):
            return None if x is None else np.asarray(x, dtype=float)

        return cls(
            kind=doc["kind"],
            priors=np.asarray(doc["priors"], dtype=float),
            program_ids=tuple(doc["program_ids"]),
            confusion=arr(doc.get("confusion")),
            accuracies=arr(doc.get("accuracies")),
            weights=arr(doc.get("weights")),
            propensity=arr(doc.get("propensity")),
            class_names=tuple(doc["class_names"]) if doc.get("class_names") else None,
        )


def save_params(path: str | Path, params: LabelModelParams) -> Path:
    path = Path(path)
    path.write_text(json.dumps(params.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    return path


def load_params(path: str | Path) -> LabelModelParams:
    return LabelModelParams.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class FitReport:
    """How a fit went. ``objective`` is the penalized (smoothed) data
    log-likelihood after each M-step; with additive smoothing this is the
    quantity EM provably does not decrease. ``log_likelihood`` is the
    plain observed-data value at the final parameters."""

    kind: str
    iterations: int
    converged: bool
    log_likelihood: float
    objective: tuple[float, ...] = ()
    accuracy_by_program: tuple[float, ...] = ()
    permutation: tuple[int, ...] = ()
    notes: tuple[str, ...] = ()


def _check_coverage(matrix: VoteMatrix):
    covered = (matrix.votes != ABSTAIN).sum(axis=0)
    for j, count in enumerate(covered):
        if count == 0:
            raise ModelError(
                f"program {matrix.program_ids[j]!r} has zero coverage; remove it "
                "before fitting (the diagnostics report flags such programs)"
            )


def _propensity(matrix: VoteMatrix) -> np.ndarray:
    return (matrix.votes != ABSTAIN).mean(axis=0)


def _mv_counts(votes: np.ndarray, K: int, weights: np.ndarray | None = None) -> np.ndarray:
    n, m = votes.shape
    counts = np.zeros((n, K))
    w = np.ones(m) if weights is None else weights
    for j in range(m):
        v = votes[:, j]
        mask = v != ABSTAIN
        np.add.at(counts, (np.nonzero(mask)[0], v[mask]), w[j])
    return counts


def _posteriors_to_pseudolabels(
    matrix: VoteMatrix, posteriors: np.ndarray
) -> list[PseudoLabel]:
    covered = (matrix.votes != ABSTAIN).any(axis=1)
    K = posteriors.shape[1]
    uniform = np.full(K, 1.0 / K)
    out = []
    for i, rid in enumerate(matrix.record_ids):
        post = posteriors[i] if covered[i] else uniform
        out.append(PseudoLabel.from_posterior(rid, post, covered=bool(covered[i])))
    return out


def majority_vote(
    matrix: VoteMatrix, K: int, weights: Sequence[float] | None = None
) -> list[PseudoLabel]:
    """(Weighted) majority vote. Posterior is the weight mass per class,
    normalized over non-abstain votes; all-abstain rows come back with
    covered=false and a uniform posterior."""
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (matrix.m,):
            raise ModelError(f"expected {matrix.m} weights, got {weights.shape}")
        if (weights <= 0).any():
            bad = int(np.argmax(weights <= 0))
            raise ModelError(
                f"weights must be positive; weight for program "
                f"{matrix.program_ids[bad]!r} is {weights[bad]}"
            )
    counts = _mv_counts(matrix.votes, K, weights)
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        posteriors = np.where(totals > 0, counts / np.where(totals == 0, 1, totals), 1.0 / K)
    return _posteriors_to_pseudolabels(matrix, posteriors)


def _mv_hard(votes: np.ndarray, K: int) -> np.ndarray:
    """Unweighted plurality labels; ties go to the smaller class index."""
    return np.argmax(_mv_counts(votes, K), axis=1)


def empirical_accuracies(
    matrix: VoteMatrix, gold: Sequence[int | None]
) -> np.ndarray:
    """Per-program accuracy over rows where the program votes and gold is
    present; NaN where a program has no such rows."""
    gold_arr = np.array([ABSTAIN if g is None else g for g in gold], dtype=np.int64)
    if gold_arr.shape[0] != matrix.n:
        raise ModelError(f"expected {matrix.n} gold labels, got {gold_arr.shape[0]}")
    out = np.full(matrix.m, np.nan)
    for j in range(matrix.m):
        v = matrix.votes[:, j]
        mask = (v != ABSTAIN) & (gold_arr != ABSTAIN)
        if mask.any():
            out[j] = float((v[mask] == gold_arr[mask]).mean())
    return out


def make_counting_params(
    matrix: VoteMatrix,
    K: int,
    kind: str = MV,
    gold: Sequence[int | None] | None = None,
    clamp: tuple[float, float] = DEFAULT_CLAMP,
    class_names: Sequence[str] | None = None,
) -> tuple[LabelModelParams, FitReport]:
    """Params for the counting kinds. WMV weights come from empirical
    accuracies when gold is given (log-odds, floored at a small positive
    value so an at-chance program nearly vanishes but never flips votes);
    without gold, WMV falls back to uniform weights with a note."""
    if kind not in (MV, WMV):
        raise ModelError(f"make_counting_params handles MV/WMV, not {kind!r}")
    _check_coverage(matrix)
    notes: list[str] = []
    accuracies = None
    weights = np.ones(matrix.m)
    if kind == WMV:
        if gold is not None and any(g is not None for g in gold):
            acc = empirical_accuracies(matrix, gold)
            if np.isnan(acc).any():
                j = int(np.argmax(np.isnan(acc)))
                notes.append(
                    f"program {matrix.program_ids[j]} has no gold-covered rows; weight set to chance"
                )
            acc = np.where(np.isnan(acc), 1.0 / K, acc)
            accuracies = np.clip(acc, clamp[0], clamp[1])
            weights = np.maximum(np.log(accuracies / (1 - accuracies)), 0.01)
        else:
            notes.append("no gold labels available; WMV using uniform weights")
    priors = np.full(K, 1.0 / K)
    params = LabelModelParams(
        kind=kind,
        priors=priors,
        program_ids=matrix.program_ids,
        accuracies=accuracies,
        weights=weights,
        propensity=_propensity(matrix),
        class_names=tuple(class_names) if class_names else None,
    )
    report = FitReport(
        kind=kind,
        iterations=0,
        converged=True,
        log_likelihood=float("nan"),
        accuracy_by_program=tuple(accuracies.tolist()) if accuracies is not None else (),
        notes=tuple(notes),
    )
    return params, report


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    peak = a.max(axis=axis, keepdims=True)
    return (peak + np.log(np.exp(a - peak).sum(axis=axis, keepdims=True))).squeeze(axis)


def _estep(votes: np.ndarray, priors: np.ndarray, confusion: np.ndarray) -> np.ndarray:
    """Posterior over true classes per row: q_i(k) ∝ prior_k times the
    product of Conf_j[k, vote_ij] over non-abstain votes."""
    n, m = votes.shape
    log_q = np.tile(np.log(priors), (n, 1))
    log_conf = np.log(confusion)
    for j in range(m):
        v = votes[:, j]
        mask = v != ABSTAIN
        log_q[mask] += log_conf[j][:, v[mask]].T
    log_q -= _logsumexp(log_q, axis=1)[:, None]
    return np.exp(log_q)


def _observed_ll(votes: np.ndarray, priors: np.ndarray, confusion: np.ndarray) -> float:
    n, m = votes.shape
    log_q = np.tile(np.log(priors), (n, 1))
    log_conf = np.log(confusion)
    for j in range(m):
        v = votes[:, j]
        mask = v != ABSTAIN
        log_q[mask] += log_conf[j][:, v[mask]].T
    return float(_logsumexp(log_q, axis=1).sum())


def _smoothed_mv_init(votes: np.ndarray, K: int, smoothing: float) -> np.ndarray:
    counts = _mv_counts(votes, K)
    return (counts + smoothing) / (counts.sum(axis=1, keepdims=True) + K * smoothing)


def _class_counts(votes: np.ndarray, q: np.ndarray, K: int) -> np.ndarray:
    """counts[j][k, c] = total posterior mass of class k among rows where
    program j voted c."""
    n, m = votes.shape
    counts = np.zeros((m, K, K))
    for j in range(m):
        v = votes[:, j]
        for c in range(K):
            mask = v == c
            if mask.any():
                counts[j, :, c] = q[mask].sum(axis=0)
    return counts


def _align_permutation(
    q: np.ndarray, votes: np.ndarray, K: int, candidates=None
) -> tuple[int, ...]:
    """Class permutation (new = perm[old]) that best matches majority vote
    on covered rows. Identity wins ties; exhaustive search is fine at the
    class counts this package targets (K at most a handful)."""
    covered = (votes != ABSTAIN).any(axis=1)
    if not covered.any():
        return tuple(range(K))
    mv = _mv_hard(votes[covered], K)
    model = np.argmax(q[covered], axis=1)
    best, best_score = tuple(range(K)), -1.0
    perms = candidates if candidates is not None else itertools.permutations(range(K))
    for perm in perms:
        perm = tuple(perm)
        score = float(np.mean(np.array(perm)[model] == mv))
        if score > best_score:
            best, best_score = perm, score
    return best


def _apply_permutation(priors: np.ndarray, confusion: np.ndarray, perm: tuple[int, ...]):
    """Relabel latent classes: new class perm[k] gets old class k's prior
    and confusion row. Observed vote columns stay put."""
    K = len(priors)
    new_priors = np.empty_like(priors)
    new_conf = np.empty_like(confusion)
    for k in range(K):
        new_priors[perm[k]] = priors[k]
        new_conf[:, perm[k], :] = confusion[:, k, :]
    return new_priors, new_conf


def fit_dawid_skene(
    matrix: VoteMatrix,
    K: int,
    *,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    smoothing: float = DEFAULT_SMOOTHING,
    class_names: Sequence[str] | None = None,
) -> tuple[LabelModelParams, FitReport]:
    """EM for the classic per-program confusion-matrix model, abstains
    excluded from the likelihood. Deterministic: initialization is smoothed
    majority vote, and any residual label switching is undone by aligning
    classes to majority vote."""
    _check_coverage(matrix)
    votes = matrix.votes
    n = matrix.n
    q = _smoothed_mv_init(votes, K, smoothing)
    objective: list[float] = []
    converged = False
    iterations = 0
    priors = confusion = None
    for iterations in range(1, max_iter + 1):
        # M-step: smoothed counts
        priors = (q.sum(axis=0) + smoothing) / (n + K * smoothing)
        counts = _class_counts(votes, q, K)
        confusion = (counts + smoothing) / (
            counts.sum(axis=2, keepdims=True) + K * smoothing
        )
        objective.append(
            _observed_ll(votes, priors, confusion)
            + smoothing * float(np.log(priors).sum())
            + smoothing * float(np.log(confusion).sum())
        )
        # E-step
        q_new = _estep(votes, priors, confusion)
        delta = float(np.abs(q_new - q).max())
        q = q_new
        if delta < tol:
            converged = True
            break
    perm = _align_permutation(q, votes, K)
    if perm != tuple(range(K)):
        priors, confusion = _apply_permutation(priors, confusion, perm)
    params = LabelModelParams(
        kind=DAWID_SKENE,
        priors=priors,
        program_ids=matrix.program_ids,
        confusion=confusion,
        propensity=_propensity(matrix),
        class_names=tuple(class_names) if class_names else None,
    )
    acc = np.einsum("k,jkk->j", priors, confusion)
    report = FitReport(
        kind=DAWID_SKENE,
        iterations=iterations,
        converged=converged,
        log_likelihood=_observed_ll(votes, priors, confusion),
        objective=tuple(objective),
        accuracy_by_program=tuple(acc.tolist()),
        permutation=perm,
    )
    return params, report


def fit_snorkel_lite(
    matrix: VoteMatrix,
    K: int,
    *,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    smoothing: float = DEFAULT_SMOOTHING,
    clamp: tuple[float, float] = DEFAULT_CLAMP,
    class_names: Sequence[str] | None = None,
) -> tuple[LabelModelParams, FitReport]:
    """One-coin EM: each program has one accuracy a_j, errors uniform over
    the K-1 wrong classes. A documented stand-in for the Snorkel label
    model; same contract as fit_dawid_skene otherwise."""
    _check_coverage(matrix)
    votes = matrix.votes
    n, m = votes.shape
    q = _smoothed_mv_init(votes, K, smoothing)
    eye = np.eye(K)
    off = (np.ones((K, K)) - eye) / max(K - 1, 1)

    def conf_from_acc(acc: np.ndarray) -> np.ndarray:
        return acc[:, None, None] * eye + (1 - acc)[:, None, None] * off

    objective: list[float] = []
    converged = False
    iterations = 0
    priors = accuracies = None
    for iterations in range(1, max_iter + 1):
        priors = (q.sum(axis=0) + smoothing) / (n + K * smoothing)
        correct = np.zeros(m)
        total = np.zeros(m)
        for j in range(m):
            v = votes[:, j]
            mask = v != ABSTAIN
            correct[j] = q[mask, v[mask]].sum()
            total[j] = mask.sum()
        accuracies = np.clip((correct + smoothing) / (total + 2 * smoothing), clamp[0], clamp[1])
        confusion = conf_from_acc(accuracies)
        objective.append(
            _observed_ll(votes, priors, confusion)
            + smoothing * float(np.log(priors).sum())
            + smoothing * float(np.log(accuracies).sum() + np.log(1 - accuracies).sum())
        )
        q_new = _estep(votes, priors, confusion)
        delta = float(np.abs(q_new - q).max())
        q = q_new
        if delta < tol:
            converged = True
            break
    # one-coin confusions are only closed under relabeling for K=2
    # (swap maps a to 1-a); for larger K the identity is the only
    # candidate that keeps the parametrization
    if K == 2:
        perm = _align_permutation(q, votes, K, candidates=[(0, 1), (1, 0)])
        if perm == (1, 0):
            priors = priors[::-1].copy()
            accuracies = 1 - accuracies
    else:
        perm = tuple(range(K))
    confusion = conf_from_acc(accuracies)
    params = LabelModelParams(
        kind=SNORKEL_LITE,
        priors=priors,
        program_ids=matrix.program_ids,
        confusion=confusion,
        accuracies=accuracies,
        propensity=_propensity(matrix),
        class_names=tuple(class_names) if class_names else None,
    )
    report = FitReport(
        kind=SNORKEL_LITE,
        iterations=iterations,
        converged=converged,
        log_likelihood=_observed_ll(votes, priors, confusion),
        objective=tuple(objective),
        accuracy_by_program=tuple(accuracies.tolist()),
        permutation=perm,
    )
    return params, report


def fit_triplet(
    matrix: VoteMatrix,
    K: int,
    *,
    clamp: tuple[float, float] = DEFAULT_CLAMP,
    min_pairs: int = DEFAULT_MIN_PAIRS,
    class_names: Sequence[str] | None = None,
) -> tuple[LabelModelParams, FitReport]:
    """Moment-based accuracy estimation for binary tasks.

    Votes map to -1/+1 (abstain drops out pairwise). For conditionally
    independent programs, E[s_a s_b] = (2a_a-1)(2a_b-1) under balanced
    classes, so E[s_j s_a] E[s_j s_b] / E[s_a s_b] = (2a_j-1)^2. The median
    of that moment over all usable triplets, sign-resolved by agreement
    with majority vote, gives a_j. Aggregation weight is log(a/(1-a)).
    """
    if K != 2:
        raise ModelError(f"the triplet estimator supports binary tasks only (K=2, got K={K})")
    if matrix.m < 3:
        raise ModelError(f"the triplet estimator needs at least 3 programs, got {matrix.m}")
    _check_coverage(matrix)
    votes = matrix.votes
    m = matrix.m
    signs = np.where(votes == ABSTAIN, 0, 2 * votes - 1).astype(float)
    nonabstain = votes != ABSTAIN

    pair_mean = np.full((m, m), np.nan)
    for a in range(m):
        for b in range(a + 1, m):
            both = nonabstain[:, a] & nonabstain[:, b]
            if both.sum() >= min_pairs:
                value = float((signs[both, a] * signs[both, b]).mean())
                pair_mean[a, b] = pair_mean[b, a] = value

    mv = _mv_hard(votes, 2)
    accuracies = np.empty(m)
    notes: list[str] = []
    for j in range(m):
        moments = []
        for a, b in itertools.combinations([x for x in range(m) if x != j], 2):
            e_ja, e_jb, e_ab = pair_mean[j, a], pair_mean[j, b], pair_mean[a, b]
            if math.isnan(e_ja) or math.isnan(e_jb) or math.isnan(e_ab):
                continue
            if abs(e_ab) < _MIN_DENOMINATOR:
                continue
            moments.append(e_ja * e_jb / e_ab)
        if not moments:
            raise ModelError(
                f"program {matrix.program_ids[j]!r}: every triplet was skipped "
                f"(fewer than {min_pairs} jointly covered rows, or degenerate "
                "pair agreements); cannot estimate its accuracy"
            )
        med = float(np.clip(np.median(moments), 0.0, 1.0))
        voted = nonabstain[:, j]
        agree = float((votes[voted, j] == mv[voted]).mean()) if voted.any() else 0.5
        sign = 1.0 if agree >= 0.5 else -1.0
        accuracies[j] = (1.0 + sign * math.sqrt(med)) / 2.0
    accuracies = np.clip(accuracies, clamp[0], clamp[1])
    weights = np.log(accuracies / (1 - accuracies))
    params = LabelModelParams(
        kind=TRIPLET,
        priors=np.array([0.5, 0.5]),
        program_ids=matrix.program_ids,
        confusion=np.stack(
            [np.array([[a, 1 - a], [1 - a, a]]) for a in accuracies]
        ),
        accuracies=accuracies,
        weights=weights,
        propensity=_propensity(matrix),
        class_names=tuple(class_names) if class_names else None,
    )
    report = FitReport(
        kind=TRIPLET,
        iterations=1,
        converged=True,
        log_likelihood=_observed_ll(votes, params.priors, params.confusion),
        accuracy_by_program=tuple(accuracies.tolist()),
        notes=tuple(notes),
    )
    return params, report


def posterior_matrix(params: LabelModelParams, matrix: VoteMatrix) -> np.ndarray:
    """(n, K) posteriors for covered rows; uncovered rows get uniform."""
    if params.m != matrix.m:
        raise ModelError(
            f"params were fitted for {params.m} programs but the vote matrix has {matrix.m}"
        )
    K = params.K
    if matrix.votes.size and matrix.votes.max() >= K:
        raise ModelError(f"votes contain class indices outside 0..{K - 1}")
    if params.kind in (MV, WMV):
        counts = _mv_counts(matrix.votes, K, params.weights)
        totals = counts.sum(axis=1, keepdims=True)
        posteriors = np.where(
            totals > 0, counts / np.where(totals == 0, 1, totals), 1.0 / K
        )
    else:
        posteriors = _estep(matrix.votes, params.priors, params.confusion)
    uncovered = ~(matrix.votes != ABSTAIN).any(axis=1)
    posteriors[uncovered] = 1.0 / K
    return posteriors


def predict(params: LabelModelParams, matrix: VoteMatrix) -> list[PseudoLabel]:
    """Aggregate votes into pseudolabels under fitted params. Ties in the
    posterior break toward the smallest class index."""
    return _posteriors_to_pseudolabels(matrix, posterior_matrix(params, matrix))


FITTERS = {
    "mv": lambda matrix, K, **kw: make_counting_params(matrix, K, kind=MV, **kw),
    "wmv": lambda matrix, K, **kw: make_counting_params(matrix, K, kind=WMV, **kw),
    "ds": fit_dawid_skene,
    "triplet": fit_triplet,
    "snorkel-lite": fit_snorkel_lite,
}
