"""Shared synthetic-vote generators for the test suite.

Both samplers draw from the conditional-independence model the label
models assume, so planted parameters are the recovery oracle.
"""

import numpy as np

from labelsmith.data import ABSTAIN, VoteMatrix


def planted_confusion_votes(n, m, K, diag, seed, abstain=0.0):
    """Votes from m identical programs with confusion diag*I + (1-diag)/(K-1)
    off the diagonal, uniform priors. Returns (VoteMatrix, truth array)."""
    rng = np.random.default_rng(seed)
    truth = rng.choice(K, size=n)
    conf = np.full((K, K), (1 - diag) / (K - 1))
    np.fill_diagonal(conf, diag)
    votes = np.full((n, m), ABSTAIN, dtype=np.int64)
    for j in range(m):
        fires = rng.random(n) >= abstain
        cum = conf[truth].cumsum(axis=1)
        draws = (rng.random(n)[:, None] < cum).argmax(axis=1)
        votes[fires, j] = draws[fires]
    matrix = VoteMatrix(
        votes=votes,
        program_ids=tuple(f"p{j}" for j in range(m)),
        record_ids=tuple(f"r{i}" for i in range(n)),
    )
    return matrix, truth


def planted_binary_votes(n, accuracies, seed, abstain=0.2):
    """Binary votes with per-program planted accuracies, balanced classes."""
    rng = np.random.default_rng(seed)
    truth = rng.integers(0, 2, size=n)
    m = len(accuracies)
    votes = np.full((n, m), ABSTAIN, dtype=np.int64)
    for j, acc in enumerate(accuracies):
        fires = rng.random(n) >= abstain
        correct = rng.random(n) < acc
        v = np.where(correct, truth, 1 - truth)
        votes[fires, j] = v[fires]
    matrix = VoteMatrix(
        votes=votes,
        program_ids=tuple(f"p{j}" for j in range(m)),
        record_ids=tuple(f"r{i}" for i in range(n)),
    )
    return matrix, truth
