import json
import random
import shutil
import time

import numpy as np
import pytest

from attrlink.cli import load_training_data, main, resolve_args
from attrlink.factor_model import format_model, init_model, load_model
from attrlink.formats import format_predictions, load_predictions
from attrlink.relations import load_associations
from attrlink.synthetic import toy_dataset_dir
from attrlink.associations import AssociationPrediction
from attrlink.zsl import ABSTAIN, NEGATIVE, POSITIVE

FAST = ["--epochs", "20"]


@pytest.fixture
def toy(tmp_path):
    d = tmp_path / "toy"
    shutil.copytree(toy_dataset_dir(), d)
    return d


def run(toy, *args):
    return main(["--config", str(toy / "config.toml"), *map(str, args)])


def pipeline(toy, out):
    """cluster-relations, train, calibrate, predict, zsl, eval-assoc; returns exit codes."""
    codes = [
        run(toy, "cluster-relations", "--n-clusters", 4, "--out", out / "dr.tsv"),
        run(toy, "train", *FAST, "--model", out / "model.json"),
        run(toy, "calibrate", "--model", out / "model.json", *FAST, "--folds", 2, "--grid-step", 0.25,
            "--out", out / "thresholds.json"),
        run(toy, "predict", "--model", out / "model.json", "--thresholds", out / "thresholds.json",
            "--out", out / "pred.tsv"),
        run(toy, "zsl", "--predictions", out / "pred.tsv", "--out-dir", out / "zsl"),
        run(toy, "eval-assoc", "--predictions", out / "pred.tsv", "--truth", toy / "associations.tsv",
            "--schema", toy / "schema.tsv", "--out-dir", out / "eval"),
    ]
    return codes


def truth_predictions(toy, path, classes=("class8", "class9", "class10")):
    names, attrs, assoc = load_associations(toy / "associations.tsv")
    preds = []
    for c in classes:
        row = assoc.values[names.index(c)]
        preds.append(AssociationPrediction(c, attrs.names, row.astype(float),
                                           np.where(row == 1, POSITIVE, NEGATIVE).astype(np.int8)))
    path.write_text(format_predictions(preds))
    return path


class TestTrain:
    def test_toy_trains_quickly(self, toy, tmp_path):
        start = time.perf_counter()
        assert run(toy, "train", "--model", tmp_path / "m.json") == 0
        assert time.perf_counter() - start < 10
        report = json.loads((tmp_path / "m_report.json").read_text())
        assert report["seed"] == 0 and len(report["epoch_losses"]) == 200
        assert report["final_loss"] < report["initial_loss"]
        assert (tmp_path / "m_report_loss.png").exists()
        assert load_model(tmp_path / "m.json").n_relations == 3

    def test_zero_epochs_is_initialisation(self, toy, tmp_path):
        assert run(toy, "train", "--epochs", 0, "--model", tmp_path / "m.json") == 0
        args = resolve_args(["--config", str(toy / "config.toml"), "train", "--model", "unused"])
        _, ds, C, A = load_training_data(args)
        expected = init_model(16, ds.schema.n_relations, 4, 1.0, C, A, seed=0,
                              relation_names=ds.schema.relation_names,
                              attribute_names=ds.attrs.names, assignment=ds.schema.assignment)
        assert (tmp_path / "m.json").read_text() == format_model(expected)

    def test_byte_identical_reruns(self, toy, tmp_path):
        for name in ("a.json", "b.json"):
            assert run(toy, "train", *FAST, "--model", tmp_path / name) == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_missing_embeddings(self, toy, tmp_path, capsys):
        assert run(toy, "train", "--embeddings", tmp_path / "nope.txt", "--model", tmp_path / "m.json") == 2
        assert "nope.txt" in capsys.readouterr().err
        assert not (tmp_path / "m.json").exists()

    def test_flags_override_config(self, toy, tmp_path):
        assert run(toy, "train", "--epochs", 3, "--seed", 5, "--model", tmp_path / "m.json") == 0
        report = json.loads((tmp_path / "m_report.json").read_text())
        assert report["seed"] == 5 and len(report["epoch_losses"]) == 3

    def test_ablation_flags(self, toy, tmp_path):
        assert run(toy, "train", *FAST, "--single-relation", "--fixed-attr-embeddings",
                   "--model", tmp_path / "m.json") == 0
        model = load_model(tmp_path / "m.json")
        assert model.relation_names == ("has_attribute",)
        report = json.loads((tmp_path / "m_report.json").read_text())
        assert report["config"]["learn_attr_embeddings"] is False

    def test_data_driven_relations(self, toy, tmp_path):
        assert run(toy, "train", *FAST, "--relations", "data-driven", "--n-clusters", 5,
                   "--model", tmp_path / "m.json") == 0
        assert load_model(tmp_path / "m.json").relation_names == tuple(f"dr_{i}" for i in range(5))

    def test_search(self, toy, tmp_path):
        assert run(toy, "train", *FAST, "--search-factors", "1,2", "--search-lambda", "1",
                   "--search-folds", 2, "--model", tmp_path / "m.json") == 0
        search = json.loads((tmp_path / "m_report.json").read_text())["hyperparameter_search"]
        assert search["selected"]["n_factors"] in (1, 2) and len(search["validation_map"]) == 2

    def test_unknown_unseen_class(self, toy, tmp_path, capsys):
        assert run(toy, "train", "--unseen", "okapi", "--model", tmp_path / "m.json") == 2
        assert "okapi" in capsys.readouterr().err

    def test_divergence_exit_code(self, toy, tmp_path, capsys):
        code = run(toy, "train", "--learning-rate", 1e308, "--init-scale", 1e300, "--model", tmp_path / "m.json")
        assert code == 1
        assert "training failed" in capsys.readouterr().err
        assert not (tmp_path / "m.json").exists()

    def test_transfer_two_datasets(self, toy, tmp_path):
        names, attrs, assoc = load_associations(toy / "associations.tsv")
        second = "class\tstriped\tspotted\n" + "".join(f"{n}\t{i % 2}\t{(i + 1) % 2}\n" for i, n in enumerate(names))
        (toy / "assoc2.tsv").write_text(second)
        (toy / "schema2.tsv").write_text("striped\thas_pattern\nspotted\thas_pattern\n")
        (toy / "emb2.txt").write_text(_extend_embeddings(toy / "embeddings.txt", ["striped", "spotted"]))
        code = main(["--config", str(toy / "config.toml"), "train", *FAST, "--embeddings", str(toy / "emb2.txt"),
                     "--associations", str(toy / "associations.tsv"), "--schema", str(toy / "schema.tsv"),
                     "--associations", str(toy / "assoc2.tsv"), "--schema", str(toy / "schema2.tsv"),
                     "--model", str(tmp_path / "m.json")])
        assert code == 0
        model = load_model(tmp_path / "m.json")
        assert model.n_attributes == 14 and "has_pattern" in model.relation_names


def _extend_embeddings(path, tokens):
    lines = path.read_text().splitlines()
    n, d = map(int, lines[0].split())
    rng = np.random.default_rng(0)
    extra = [t + " " + " ".join(f"{v:.6f}" for v in rng.standard_normal(d)) for t in tokens]
    return "\n".join([f"{n + len(tokens)} {d}", *lines[1:], *extra]) + "\n"


class TestPredict:
    @pytest.fixture
    def model(self, toy, tmp_path):
        assert run(toy, "train", *FAST, "--model", tmp_path / "m.json") == 0
        return tmp_path / "m.json"

    def test_fixed_mode_rows_and_no_abstentions(self, toy, tmp_path, model):
        assert run(toy, "predict", "--model", model, "--threshold-mode", "fixed", "--out", tmp_path / "p.tsv") == 0
        preds = load_predictions(tmp_path / "p.tsv")
        assert [p.class_name for p in preds] == ["class8", "class9", "class10"]
        rows = (tmp_path / "p.tsv").read_text().splitlines()[1:]
        assert len(rows) == 3 * 12
        assert all(np.all(p.decisions != ABSTAIN) for p in preds)

    def test_unknown_class_lists_nearest(self, toy, tmp_path, model, capsys):
        code = run(toy, "predict", "--model", model, "--classes", "clas8", "--threshold-mode", "fixed",
                   "--out", tmp_path / "p.tsv")
        assert code == 2
        err = capsys.readouterr().err
        assert "clas8" in err and "class8" in err

    def test_learned_mode_needs_thresholds(self, toy, tmp_path, model):
        assert run(toy, "predict", "--model", model, "--out", tmp_path / "p.tsv") == 2

    def test_thresholds_respected(self, toy, tmp_path, model):
        (tmp_path / "t.json").write_text('{"t_minus": 0.0, "t_plus": 1.0}')
        assert run(toy, "predict", "--model", model, "--thresholds", tmp_path / "t.json",
                   "--out", tmp_path / "p.tsv") == 0
        assert all(np.all(p.decisions == ABSTAIN) for p in load_predictions(tmp_path / "p.tsv"))


class TestZsl:
    def test_oracle_relations(self, toy, tmp_path):
        pred = truth_predictions(toy, tmp_path / "truth_pred.tsv")
        assert run(toy, "zsl", "--predictions", pred, "--out-dir", tmp_path / "z") == 0
        metrics = json.loads((tmp_path / "z" / "zsl_metrics.json").read_text())
        assert metrics["mean_per_class_accuracy"] == 1.0
        assert set(metrics["per_class_accuracy"]) == {"class8", "class9", "class10"}
        rows = (tmp_path / "z" / "zsl_predictions.tsv").read_text().splitlines()
        assert rows[0] == "image_id\ttrue_class\tpredicted_class" and len(rows) == 13
        assert (tmp_path / "z" / "zsl_accuracy.png").exists()

    def test_supervised_reference(self, toy, tmp_path):
        assert run(toy, "zsl", "--baseline", "supervised", "--out-dir", tmp_path / "z") == 0
        assert json.loads((tmp_path / "z" / "zsl_metrics.json").read_text())["mean_per_class_accuracy"] == 1.0

    @pytest.mark.parametrize("baseline", ["dice", "similarity", "top-q", "nearest-class", "weighted-classes"])
    def test_baselines_run(self, toy, tmp_path, baseline):
        assert run(toy, "zsl", "--baseline", baseline, "--out-dir", tmp_path / "z") == 0
        metrics = json.loads((tmp_path / "z" / "zsl_metrics.json").read_text())
        assert metrics["baseline"] == baseline and 0 <= metrics["mean_per_class_accuracy"] <= 1

    @pytest.mark.parametrize("baseline", ["dice", "similarity"])
    def test_unseen_objective_not_worse(self, toy, tmp_path, baseline):
        accs = []
        for objective in ("seen-accuracy", "unseen-zsl"):
            out = tmp_path / objective
            assert run(toy, "zsl", "--baseline", baseline, "--threshold-objective", objective, "--out-dir", out) == 0
            accs.append(json.loads((out / "zsl_metrics.json").read_text())["mean_per_class_accuracy"])
        # tuning on the test images can only match or beat seen-class calibration
        assert accs[1] >= accs[0]

    def test_dice_reads_hit_counts(self, toy, tmp_path, capsys):
        (toy / "hit_counts.tsv").unlink()
        assert run(toy, "zsl", "--baseline", "dice", "--out-dir", tmp_path / "z") == 2
        assert "hit" in capsys.readouterr().err


class TestEvalAssoc:
    def test_truth_scores_perfectly(self, toy, tmp_path):
        pred = truth_predictions(toy, tmp_path / "truth_pred.tsv")
        assert run(toy, "eval-assoc", "--predictions", pred, "--truth", toy / "associations.tsv",
                   "--schema", toy / "schema.tsv", "--out-dir", tmp_path / "e") == 0
        metrics = json.loads((tmp_path / "e" / "assoc_metrics.json").read_text())
        assert metrics["mAP"] == 1.0 and metrics["accuracy"] == 1.0
        assert len(list((tmp_path / "e").glob("pr_*.tsv"))) == metrics["n_relations"] == 3

    def test_failed_run_leaves_nothing(self, toy, tmp_path):
        (tmp_path / "bad.tsv").write_text("class8\tattr0\t0.5\t0\n")
        code = run(toy, "eval-assoc", "--predictions", tmp_path / "bad.tsv", "--truth", toy / "associations.tsv",
                   "--schema", toy / "schema.tsv", "--out-dir", tmp_path / "e")
        assert code == 2
        assert not (tmp_path / "e").exists()


def _shuffle_rows(path, rng, header=1):
    lines = path.read_text().splitlines()
    body = lines[header:]
    rng.shuffle(body)
    path.write_text("\n".join(lines[:header] + body) + "\n")


def test_shuffled_rows_give_identical_outputs(toy, tmp_path):
    shuffled = tmp_path / "shuffled"
    shutil.copytree(toy, shuffled)
    rng = random.Random(1)
    for name in ("associations.tsv", "posteriors.tsv", "class_scores.tsv", "hit_counts.tsv", "embeddings.txt"):
        _shuffle_rows(shuffled / name, rng)
    _shuffle_rows(shuffled / "schema.tsv", rng, header=0)
    a, b = tmp_path / "out_a", tmp_path / "out_b"
    assert pipeline(toy, a) == [0] * 6
    assert pipeline(shuffled, b) == [0] * 6
    for rel in ["model.json", "thresholds.json", "pred.tsv", "dr.tsv", "zsl/zsl_metrics.json",
                "zsl/zsl_predictions.tsv", "eval/assoc_metrics.json",
                *[p.relative_to(a).as_posix() for p in (a / "eval").glob("pr_*.tsv")]]:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_missing_required_option(toy, capsys):
    assert run(toy, "eval-assoc") == 2
    assert "--predictions" in capsys.readouterr().err


def test_usage_error_exit_code():
    assert main(["no-such-command"]) == 2
