import json
from pathlib import Path

import numpy as np
import pytest

from compaug import serialize
from compaug.cli import build_parser, main
from compaug.data import load_dataset
from compaug.metrics import confusion_matrix, macro_f1, parse_results

from helpers import constant_artifact

GOLDEN = Path(__file__).parent / "golden"
TINY = {"subjects": 2, "windows_per_subject_per_class": 12, "seed": 5}
FAST = ["--hidden", "16", "--max-epochs", "3"]


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    cfg = write_json(d / "synth.json", TINY)
    assert main(["synth", "--config", cfg, "--out", str(d / "data")]) == 0
    return d / "data" / "manifest.json"


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    d = tmp_path_factory.mktemp("model")
    out = d / "artifact.json"
    assert main(["train", "--corpus", str(corpus), "--out", str(out), "--n1", "4", "--n2", "3",
                 "--seed", "2"] + FAST) == 0
    return out


@pytest.fixture(scope="module")
def constant(tmp_path_factory):
    path = tmp_path_factory.mktemp("const") / "constant.json"
    serialize.dump_file(constant_artifact(), path)
    return path


class TestSynth:
    def test_counts(self, corpus):
        assert len(load_dataset(corpus)) == 4 * 2 * 12
        assert (corpus.parent / "plant.json").exists()

    def test_rerun_byte_identical(self, corpus, tmp_path):
        cfg = write_json(tmp_path / "synth.json", TINY)
        assert main(["synth", "--config", cfg, "--out", str(tmp_path / "again")]) == 0
        for f in sorted(corpus.parent.iterdir()):
            assert (tmp_path / "again" / f.name).read_bytes() == f.read_bytes(), f.name

    def test_carrier_above_nyquist(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "bad.json", {"carriers_hz": [1.0, 2.0, 3.0, 40.0]})
        assert main(["synth", "--config", cfg, "--out", str(tmp_path / "x")]) == 2
        assert "carriers_hz" in capsys.readouterr().err

    def test_bad_json(self, tmp_path):
        (tmp_path / "bad.json").write_text("{")
        assert main(["synth", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "x")]) == 2


class TestTrain:
    def test_artifact_and_log(self, trained):
        artifact = serialize.load_file(trained, expected="ModelArtifact")
        assert len(artifact.transform_set) == 50
        assert artifact.hyper.n1 == 4 and artifact.hyper.train.seed == 2
        header = trained.with_suffix(".log.tsv").read_text().splitlines()[0]
        assert header == "epoch\tlr\ttrain_loss\tval_loss\tbest_val_loss\tearly_stop"

    def test_deterministic(self, corpus, trained, tmp_path):
        out = tmp_path / "again.json"
        assert main(["train", "--corpus", str(corpus), "--out", str(out), "--n1", "4", "--n2", "3",
                     "--seed", "2"] + FAST) == 0
        assert out.read_bytes() == trained.read_bytes()

    def test_condition_ii_limit(self, corpus, tmp_path, capsys):
        code = main(["train", "--corpus", str(corpus), "--out", str(tmp_path / "a.json"), "--n1", "100000"])
        assert code == 2
        err = capsys.readouterr().err
        # 96 windows; validation takes 2 of each class's 24, leaving 88 over 4 classes
        assert "100000" in err and "limit 22" in err

    def test_no_augment(self, corpus, tmp_path):
        out = tmp_path / "base.json"
        assert main(["train", "--corpus", str(corpus), "--out", str(out), "--no-augment"] + FAST) == 0
        artifact = serialize.load_file(out)
        assert not artifact.augmented and artifact.max_variants == 0


class TestPredict:
    def test_rows_and_metrics(self, corpus, trained, tmp_path, capsys):
        out = tmp_path / "pred.jsonl"
        assert main(["predict", "--artifact", str(trained), "--corpus", str(corpus), "--out", str(out),
                     "--n2", "3"]) == 0
        preds = serialize.loads_lines(out.read_text(), expected="Prediction")
        assert len(preds) == len(load_dataset(corpus, split="test"))
        assert all(len(p.record.variant_votes) == 3 for p in preds)
        m = confusion_matrix([p.record.final_prediction for p in preds], [p.label for p in preds], 4)
        line = capsys.readouterr().out.strip()
        assert line.endswith(f"macro_f1={macro_f1(m)!r}")

    def test_n2_zero_equals_no_tta(self, corpus, trained, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert main(["predict", "--artifact", str(trained), "--corpus", str(corpus), "--out", str(a), "--n2", "0"]) == 0
        assert main(["predict", "--artifact", str(trained), "--corpus", str(corpus), "--out", str(b), "--no-tta"]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_too_many_variants(self, corpus, trained, tmp_path):
        assert main(["predict", "--artifact", str(trained), "--corpus", str(corpus),
                     "--out", str(tmp_path / "p.jsonl"), "--n2", "5"]) == 2

    def test_missing_artifact(self, corpus, tmp_path):
        assert main(["predict", "--artifact", str(tmp_path / "nope.json"), "--corpus", str(corpus),
                     "--out", str(tmp_path / "p.jsonl")]) == 2


class TestExplain:
    def _run(self, artifact, corpus, tmp_path, window=0):
        j, s = tmp_path / "e.json", tmp_path / "e.svg"
        code = main(["explain", "--artifact", str(artifact), "--corpus", str(corpus), "--window", str(window),
                     "--out-json", str(j), "--out-svg", str(s)])
        return code, j, s

    def test_constant_model_all_zero(self, constant, corpus, tmp_path):
        code, j, _ = self._run(constant, corpus, tmp_path)
        assert code == 0
        doc = json.loads(j.read_text())
        assert not any(doc["necessity"])
        assert all(rate == 0.0 for _, _, rate in doc["band_sensitivity"])

    def test_golden(self, constant, corpus, tmp_path):
        _, j, s = self._run(constant, corpus, tmp_path, window=7)
        assert j.read_text() == (GOLDEN / "cli_constant_w7.json").read_text()
        assert s.read_text() == (GOLDEN / "cli_constant_w7.svg").read_text()

    def test_window_out_of_range(self, constant, corpus, tmp_path):
        assert self._run(constant, corpus, tmp_path, window=10_000)[0] == 2

    def test_missing_artifact(self, corpus, tmp_path):
        assert self._run(tmp_path / "missing.json", corpus, tmp_path)[0] == 2

    def test_trained_model(self, trained, corpus, tmp_path):
        code, j, _ = self._run(trained, corpus, tmp_path, window=3)
        assert code == 0
        assert serialize.load_file(j, expected="Explanation").necessity.shape == (100,)


class TestEvaluate:
    ARGS = ["--seeds", "1,2", "--n1", "2", "--n2", "2"] + FAST

    def test_all_scenarios(self, corpus, tmp_path):
        out = tmp_path / "results.tsv"
        assert main(["evaluate", "--corpus", str(corpus), "--out", str(out)] + self.ARGS) == 0
        rows = parse_results(out.read_text())
        assert len(rows) == 4 * 2 * 2
        assert [r.scenario for r in rows[::4]] == ["Base", "DAug", "CAWR", "Opti"]

    def test_restricted(self, corpus, tmp_path):
        out = tmp_path / "results.tsv"
        assert main(["evaluate", "--corpus", str(corpus), "--out", str(out), "--scenario", "Base"] + self.ARGS) == 0
        rows = parse_results(out.read_text())
        assert len(rows) == 4 and {r.scenario for r in rows} == {"Base"}

    def test_unknown_scenario(self, corpus, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["evaluate", "--corpus", str(corpus), "--out", str(tmp_path / "r.tsv"), "--scenario", "GAN"])
        assert exc.value.code == 2


class TestHelp:
    def test_every_flag_documented(self):
        parser = build_parser()
        sub = next(a for a in parser._actions if a.dest == "command")
        for name, p in sub.choices.items():
            for action in p._actions:
                if action.option_strings and action.dest != "help":
                    assert action.help, f"{name} {action.option_strings}"

    def test_usage_exit(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2
