import json
from pathlib import Path

import numpy as np
import pytest

from fuzzqe.cli import main
from fuzzqe.synth import type_cycle_kg


@pytest.fixture
def kg_dir(tmp_path, rng):
    kg = type_cycle_kg(rng, num_entities=48, num_relations=3, num_types=4,
                       holdout=0.15)
    d = tmp_path / "kg"
    kg.save(d)
    return d


def gen_args(kg_dir, out, counts, seed=3):
    return ["gen-queries", "--kg", str(kg_dir), "--out", str(out),
            "--counts", json.dumps(counts), "--seed", str(seed),
            "--max-answers", "40"]


SMALL_COUNTS = {"train": {"1p": 20, "2i": 10},
                "valid": {"1p": 8, "2i": 4},
                "test": {"1p": 8, "2in": 4}}


class TestGenQueries:
    def test_writes_files_and_manifest(self, kg_dir, tmp_path, capsys):
        out = tmp_path / "q"
        assert main(gen_args(kg_dir, out, SMALL_COUNTS)) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["achieved"]["train"]["1p"] == 20
        assert (out / "config.json").exists()
        assert "achieved" in capsys.readouterr().out

    def test_missing_kg_dir_exits_2_naming_path(self, tmp_path, capsys):
        missing = tmp_path / "nowhere"
        rc = main(gen_args(missing, tmp_path / "q", SMALL_COUNTS))
        assert rc == 2
        assert "nowhere" in capsys.readouterr().err

    def test_rerun_is_byte_identical(self, kg_dir, tmp_path):
        main(gen_args(kg_dir, tmp_path / "a", SMALL_COUNTS))
        main(gen_args(kg_dir, tmp_path / "b", SMALL_COUNTS))
        for f in sorted((tmp_path / "a").glob("*.jsonl")):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_no_counts_is_usage_error(self, kg_dir, tmp_path):
        rc = main(["gen-queries", "--kg", str(kg_dir),
                   "--out", str(tmp_path / "q")])
        assert rc == 1


def _train_args(kg_dir, qdir, out, structures="1p,2i", steps=12):
    return ["train", "--kg", str(kg_dir), "--queries", str(qdir),
            "--out", str(out), "--structures", structures,
            "--d", "8", "--k-bases", "2", "--norm", "l1",
            "--batch-size", "8", "--k-neg", "4", "--lr", "0.005",
            "--max-steps", str(steps), "--patience-steps", str(steps),
            "--eval-every", "6", "--seed", "5"]


class TestTrainEvalAnswer:
    @pytest.fixture
    def trained(self, kg_dir, tmp_path):
        qdir = tmp_path / "q"
        assert main(gen_args(kg_dir, qdir, SMALL_COUNTS)) == 0
        out = tmp_path / "run"
        assert main(_train_args(kg_dir, qdir, out)) == 0
        return qdir, out

    def test_train_writes_checkpoints_and_log(self, trained):
        qdir, out = trained
        assert (out / "best.ckpt").exists()
        assert (out / "train_log.jsonl").exists()
        assert (out / "config.json").exists()

    def test_link_prediction_only_regime(self, kg_dir, tmp_path):
        # no 1p files needed: edges become the training queries
        qdir = tmp_path / "q"
        assert main(gen_args(kg_dir, qdir,
                             {"valid": {"1p": 6}})) == 0
        out = tmp_path / "lp"
        assert main(_train_args(kg_dir, qdir, out, structures="1p")) == 0
        assert (out / "best.ckpt").exists()

    def test_resume(self, kg_dir, tmp_path, trained):
        qdir, out = trained
        rc = main(_train_args(kg_dir, qdir, out, steps=24) + ["--resume"])
        assert rc == 0
        records = [json.loads(l) for l in
                   (out / "train_log.jsonl").read_text().splitlines()]
        assert records[-1]["step"] == 24

    def test_eval_reports(self, trained, tmp_path, capsys):
        qdir, out = trained
        ev = tmp_path / "ev"
        rc = main(["eval", "--checkpoint", str(out / "best.ckpt"),
                   "--queries", str(qdir), "--split", "test",
                   "--out", str(ev)])
        assert rc == 0
        report = json.loads((ev / "report.json").read_text())
        assert "avg_epfo" in report and "avg_neg" in report
        csv = (ev / "report.csv").read_text()
        assert csv.startswith("tag,mrr,hits1,hits3,hits10,n")
        assert "avg_epfo" in capsys.readouterr().out

    def test_eval_missing_split_is_data_error(self, trained, tmp_path):
        qdir, out = trained
        rc = main(["eval", "--checkpoint", str(out / "best.ckpt"),
                   "--queries", str(tmp_path / "empty"), "--out",
                   str(tmp_path / "ev2")])
        assert rc == 2

    def test_answer_exact_toy(self, tmp_path, capsys):
        from fuzzqe.kg import KnowledgeGraph
        d = tmp_path / "toy"
        KnowledgeGraph(4, 2, [(0, 0, 1), (0, 0, 2), (1, 1, 3)], [], [],
                       ["a", "b", "c", "d"], ["r", "s"]).save(d)
        q = ('{"op":"proj","rel":1,"arg":{"op":"proj","rel":0,'
             '"arg":{"op":"anchor","ent":0}}}')
        rc = main(["answer", "--kg", str(d), "--query", q, "--exact"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "3\td" in out

    def test_answer_embedding_and_overlap(self, trained, kg_dir, capsys):
        qdir, out = trained
        q = '{"op":"proj","rel":1,"arg":{"op":"anchor","ent":0}}'
        rc = main(["answer", "--checkpoint", str(out / "best.ckpt"),
                   "--kg", str(kg_dir), "--query", q, "-k", "5", "--exact"])
        assert rc == 0
        text = capsys.readouterr().out
        assert "top 5 by embedding score" in text
        assert "overlap@5" in text

    def test_answer_bad_query_is_data_error(self, tmp_path, capsys):
        rc = main(["answer", "--query", '{"op":"nope"}', "--exact"])
        assert rc in (1, 2)

    def test_answer_out_of_range_id_is_data_error(self, tmp_path, capsys):
        from fuzzqe.kg import KnowledgeGraph
        d = tmp_path / "toy"
        KnowledgeGraph(3, 1, [(0, 0, 1)], [], []).save(d)
        q = '{"op":"proj","rel":0,"arg":{"op":"anchor","ent":99}}'
        assert main(["answer", "--kg", str(d), "--query", q, "--exact"]) == 2


class TestVerify:
    def test_laws_pass(self, capsys):
        assert main(["verify", "laws", "--rounds", "5"]) == 0
        out = capsys.readouterr().out
        assert "vector laws" in out and "PASS" in out

    def test_oracle_pass(self, capsys):
        assert main(["verify", "oracle", "--rounds", "60"]) == 0
        assert "PASS" in capsys.readouterr().out
