import json

import numpy as np
import pytest

from labelsmith.data import (
    ABSTAIN,
    ClassSpace,
    DatasetError,
    PseudoLabel,
    Record,
    TaskManifest,
    VoteAssemblyError,
    VoteMatrix,
    assemble_votes,
    load_dataset,
    load_manifest,
    load_pseudolabels,
    load_votes,
    save_pseudolabels,
    save_votes,
    serialize_records,
)
from labelsmith.dsl import parse_program


class TestClassSpace:
    def test_k(self, k3_cs):
        assert k3_cs.K == 3

    def test_requires_two_classes(self):
        with pytest.raises(ValueError):
            ClassSpace(("only",))

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            ClassSpace(("a", "a"))

    def test_rejects_empty_name(self):
        with pytest.raises(ValueError):
            ClassSpace(("a", ""))

    def test_resolve_exact_and_casefold(self, spam_cs):
        assert spam_cs.resolve("spam") == 0
        assert spam_cs.resolve("Ham") == 1
        assert spam_cs.resolve("SPAM") == 0

    def test_resolve_underscores(self):
        cs = ClassSpace(("colon cancer", "lung cancer"))
        assert cs.resolve("colon_cancer") == 0
        assert cs.resolve("Lung_Cancer") == 1

    def test_resolve_unknown_is_none(self, spam_cs):
        assert spam_cs.resolve("eggs") is None


class TestRecord:
    def test_text_modality(self):
        assert Record(id="r", text="hi").modality == "text"

    def test_scores_modality(self):
        assert Record(id="r", scores={"c": 0.5}).modality == "scores"

    def test_requires_exactly_one_payload(self):
        with pytest.raises(ValueError):
            Record(id="r")
        with pytest.raises(ValueError):
            Record(id="r", text="hi", scores={"c": 0.5})


class TestVoteMatrix:
    def test_shape_and_properties(self, mk_matrix):
        m = mk_matrix([[0, 1], [-1, 0]])
        assert (m.n, m.m) == (2, 2)

    def test_rejects_entries_below_abstain(self, mk_matrix):
        with pytest.raises(ValueError):
            mk_matrix([[0, -2]])

    def test_rejects_id_count_mismatch(self):
        with pytest.raises(ValueError):
            VoteMatrix(
                votes=np.zeros((2, 2), dtype=np.int64),
                program_ids=("p0",),
                record_ids=("r0", "r1"),
            )

    def test_rejects_duplicate_ids(self):
        with pytest.raises(ValueError):
            VoteMatrix(
                votes=np.zeros((1, 2), dtype=np.int64),
                program_ids=("p", "p"),
                record_ids=("r0",),
            )

    def test_votes_are_read_only(self, mk_matrix):
        m = mk_matrix([[0, 1]])
        with pytest.raises(ValueError):
            m.votes[0, 0] = 1


class TestPseudoLabel:
    def test_from_posterior(self):
        lab = PseudoLabel.from_posterior("r", [0.2, 0.8], covered=True)
        assert lab.hard == 1
        assert lab.covered

    def test_tie_breaks_to_smallest_index(self):
        assert PseudoLabel.from_posterior("r", [0.5, 0.5], covered=True).hard == 0
        assert PseudoLabel.from_posterior("r", [0.2, 0.4, 0.4], covered=True).hard == 1

    def test_round_trip_file(self, tmp_path):
        labels = [
            PseudoLabel.from_posterior("a", [0.9, 0.1], covered=True),
            PseudoLabel.from_posterior("b", [0.5, 0.5], covered=False),
        ]
        path = save_pseudolabels(tmp_path / "pl.jsonl", labels)
        assert load_pseudolabels(path) == labels


class TestLoadTextDataset:
    def _manifest(self, tmp_path, K=2):
        names = ("spam", "ham") if K == 2 else tuple(f"c{i}" for i in range(K))
        return TaskManifest(
            name="t", class_space=ClassSpace(names), modality="text", dataset=tmp_path / "d.jsonl"
        )

    def test_happy_path(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(
            '{"id": "a", "text": "x", "gold": 0, "group": "g1"}\n{"id": "b", "text": "y"}\n',
            encoding="utf-8",
        )
        records = load_dataset(path, self._manifest(tmp_path))
        assert [r.id for r in records] == ["a", "b"]
        assert records[0].gold == 0 and records[0].group == "g1"
        assert records[1].gold is None

    def test_malformed_line_number(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "a", "text": "x"}\nnot json\n', encoding="utf-8")
        with pytest.raises(DatasetError, match="line 2"):
            load_dataset(path, self._manifest(tmp_path))

    def test_duplicate_id_named(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "a", "text": "x"}\n{"id": "a", "text": "y"}\n', encoding="utf-8")
        with pytest.raises(DatasetError, match="'a'"):
            load_dataset(path, self._manifest(tmp_path))

    def test_gold_out_of_range(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "a", "text": "x", "gold": 5}\n', encoding="utf-8")
        with pytest.raises(DatasetError, match="line 1"):
            load_dataset(path, self._manifest(tmp_path))

    def test_serialize_round_trip(self, tmp_path):
        records = [
            Record(id="a", text="x", gold=1, group="g"),
            Record(id="b", text="y"),
        ]
        path = serialize_records(records, tmp_path / "out.jsonl")
        assert load_dataset(path, self._manifest(tmp_path)) == records


class TestLoadScoresDataset:
    def _manifest(self, path, concepts=None):
        return TaskManifest(
            name="t",
            class_space=ClassSpace(("a", "b")),
            modality="scores",
            dataset=path,
            concepts=concepts,
        )

    def test_csv_happy_path(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("id,wing,beak,gold,group\nr0,0.1,0.9,1,g\nr1,0.4,0.6,,\n", encoding="utf-8")
        records = load_dataset(path, self._manifest(path))
        assert records[0].scores == {"wing": 0.1, "beak": 0.9}
        assert records[0].gold == 1 and records[0].group == "g"
        assert records[1].gold is None and records[1].group is None

    def test_csv_concept_mismatch_names_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("id,wing\nr0,0.5\n", encoding="utf-8")
        with pytest.raises(DatasetError, match="beak"):
            load_dataset(path, self._manifest(path, concepts=("wing", "beak")))

    def test_csv_rejects_non_finite(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("id,wing\nr0,nan\n", encoding="utf-8")
        with pytest.raises(DatasetError, match="line 2"):
            load_dataset(path, self._manifest(path))

    def test_jsonl_scores(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "r0", "scores": {"wing": 0.25}}\n', encoding="utf-8")
        records = load_dataset(path, self._manifest(path))
        assert records[0].scores == {"wing": 0.25}


class TestAssembleVotes:
    def test_known_votes(self, spam_cs):
        programs = [
            parse_program('rule: contains("free") -> spam;', spam_cs, program_id="p_free"),
            parse_program('rule: length_at_least(10) -> ham;', spam_cs, program_id="p_long"),
        ]
        records = [
            Record(id="a", text="free stuff here"),
            Record(id="b", text="hi"),
        ]
        matrix = assemble_votes(records, programs)
        assert matrix.votes.tolist() == [[0, 1], [ABSTAIN, ABSTAIN]]
        assert matrix.program_ids == ("p_free", "p_long")

    def test_modality_mismatch_names_program(self, spam_cs):
        program = parse_program('rule: score("c") >= 0.5 -> spam;', spam_cs, program_id="scorey")
        with pytest.raises(VoteAssemblyError, match="scorey"):
            assemble_votes([Record(id="a", text="x")], [program])

    def test_deterministic(self, spam_cs):
        program = parse_program('rule: contains("x") -> spam;', spam_cs)
        records = [Record(id=f"r{i}", text="x" * i) for i in range(5)]
        a = assemble_votes(records, [program])
        b = assemble_votes(records, [program])
        assert np.array_equal(a.votes, b.votes)


class TestVotesFile:
    def test_round_trip_with_gold_and_groups(self, tmp_path, mk_matrix):
        matrix = mk_matrix([[0, 1], [-1, 0]])
        path = save_votes(
            tmp_path / "v.json",
            matrix,
            ("spam", "ham"),
            task="demo",
            gold=[0, None],
            groups=["g1", None],
        )
        loaded, meta = load_votes(path)
        assert np.array_equal(loaded.votes, matrix.votes)
        assert loaded.program_ids == matrix.program_ids
        assert meta["classes"] == ["spam", "ham"]
        assert meta["gold"] == [0, None]
        assert meta["group"] == ["g1", None]

    def test_missing_key_rejected(self, tmp_path):
        path = tmp_path / "v.json"
        path.write_text('{"classes": ["a", "b"]}', encoding="utf-8")
        with pytest.raises(DatasetError, match="program_ids"):
            load_votes(path)

    def test_vote_outside_class_range_rejected(self, tmp_path, mk_matrix):
        path = save_votes(tmp_path / "v.json", mk_matrix([[2]]), ("a", "b", "c"))
        doc = json.loads(path.read_text(encoding="utf-8"))
        doc["classes"] = ["a", "b"]
        path.write_text(json.dumps(doc), encoding="utf-8")
        with pytest.raises(DatasetError):
            load_votes(path)


class TestManifest:
    def test_relative_paths_resolve_against_manifest_dir(self, tmp_path):
        (tmp_path / "data.jsonl").write_text('{"id": "a", "text": "x"}\n', encoding="utf-8")
        mpath = tmp_path / "task.json"
        mpath.write_text(
            json.dumps(
                {"name": "t", "classes": ["a", "b"], "modality": "text", "dataset": "data.jsonl"}
            ),
            encoding="utf-8",
        )
        manifest = load_manifest(mpath)
        assert manifest.dataset == tmp_path / "data.jsonl"

    def test_missing_dataset_rejected(self, tmp_path):
        mpath = tmp_path / "task.json"
        mpath.write_text(
            json.dumps(
                {"name": "t", "classes": ["a", "b"], "modality": "text", "dataset": "gone.jsonl"}
            ),
            encoding="utf-8",
        )
        with pytest.raises(DatasetError, match="gone.jsonl"):
            load_manifest(mpath)
