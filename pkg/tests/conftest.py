import numpy as np
import pytest

from labelsmith.data import ClassSpace, VoteMatrix


@pytest.fixture
def spam_cs():
    return ClassSpace(("spam", "ham"))


@pytest.fixture
def k3_cs():
    return ClassSpace(("red", "green", "blue"))


@pytest.fixture
def mk_matrix():
    def _mk(votes, program_ids=None, record_ids=None):
        votes = np.asarray(votes, dtype=np.int64)
        n, m = votes.shape
        return VoteMatrix(
            votes=votes,
            program_ids=tuple(program_ids or (f"p{j}" for j in range(m))),
            record_ids=tuple(record_ids or (f"r{i}" for i in range(n))),
        )

    return _mk
