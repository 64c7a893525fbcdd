import json

import pytest

from relex.cli import main


def run(args):
    return main(args)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Shared tiny end-to-end workspace: graph -> model -> explanation ->
    cres -> factor graph, built through the CLI itself."""
    ws = tmp_path_factory.mktemp("cli")
    assert run(["generate", "--dataset", "ba-shapes", "--base-nodes", "12",
                "--motifs", "2", "--seed", "3",
                "--out", str(ws / "graph.json")]) == 0
    assert run(["train", "--graph", str(ws / "graph.json"), "--seed", "1",
                "--hidden-dim", "16", "--epochs", "600",
                "--out", str(ws / "model.json")]) == 0
    return ws


class TestGenerate:
    def test_writes_loadable_graph(self, workspace):
        blob = json.loads((workspace / "graph.json").read_text())
        assert blob["n"] == 22
        assert blob["classes"] == 4

    def test_tree_dataset(self, tmp_path):
        out = tmp_path / "tree.json"
        assert run(["generate", "--dataset", "tree-cycles", "--height", "3",
                    "--motifs", "1", "--seed", "0", "--out", str(out)]) == 0
        assert json.loads(out.read_text())["n"] == 13

    def test_bad_dataset_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run(["generate", "--dataset", "nope", "--out", str(tmp_path / "x")])
        assert exc.value.code == 2


class TestTrain:
    def test_model_file_shape(self, workspace):
        blob = json.loads((workspace / "model.json").read_text())
        assert blob["hidden_dim"] == 16
        assert blob["class_count"] == 4

    def test_missing_graph_validation_error(self, tmp_path):
        assert run(["train", "--graph", str(tmp_path / "none.json"),
                    "--out", str(tmp_path / "m.json")]) == 2


class TestExplainStage:
    def test_explain_writes_relations(self, workspace, tmp_path):
        out = tmp_path / "expl.json"
        code = run(["explain", "--graph", str(workspace / "graph.json"),
                    "--model", str(workspace / "model.json"),
                    "--target", "13", "--steps", "80", "--seed", "0",
                    "--out", str(out)])
        assert code == 0
        blob = json.loads(out.read_text())
        assert blob["target"] == 13
        assert blob["hops"] == 2
        assert len(blob["relations"]) >= 1

    def test_isolated_target_stage_failure(self, tmp_path):
        graph = {"n": 3, "edges": [[0, 1]], "labels": [0, 1, 0],
                 "features": [[1.0]] * 3, "classes": 2}
        (tmp_path / "g.json").write_text(json.dumps(graph))
        assert run(["train", "--graph", str(tmp_path / "g.json"),
                    "--epochs", "5", "--hidden-dim", "4",
                    "--out", str(tmp_path / "m.json")]) == 0
        code = run(["explain", "--graph", str(tmp_path / "g.json"),
                    "--model", str(tmp_path / "m.json"), "--target", "2",
                    "--out", str(tmp_path / "e.json")])
        assert code == 3


class TestCresLearnFgEvaluate:
    def test_full_single_target_chain(self, workspace, tmp_path):
        cres_out = tmp_path / "cres.json"
        code = run(["cres", "--graph", str(workspace / "graph.json"),
                    "--model", str(workspace / "model.json"),
                    "--target", "13", "--steps", "60", "--seed", "0",
                    "--out", str(cres_out)])
        assert code == 0
        blob = json.loads(cres_out.read_text())
        assert blob["target"] == 13
        assert len(blob["explanations"]) == len(blob["ranks"])

        fg_out = tmp_path / "fg.json"
        assert run(["learn-fg", "--cres", str(cres_out),
                    "--out", str(fg_out)]) == 0
        fg_blob = json.loads(fg_out.read_text())
        assert fg_blob["target_card"] == 4
        assert len(fg_blob["factors"]) >= 1

        expl_out = tmp_path / "expl.json"
        assert run(["explain", "--graph", str(workspace / "graph.json"),
                    "--model", str(workspace / "model.json"),
                    "--target", "13", "--steps", "80", "--seed", "0",
                    "--out", str(expl_out)]) == 0

        report_out = tmp_path / "uncertainty.csv"
        assert run(["evaluate", "--fg", str(fg_out),
                    "--explanation", str(expl_out),
                    "--out", str(report_out)]) == 0
        lines = report_out.read_text().strip().split("\n")
        assert lines[0] == "u,v,gc,delta,neg_log_delta,converged"
        assert len(lines) >= 2


class TestVerifyAndReport:
    def test_verify_writes_results_and_exit_zero(self, tmp_path):
        out = tmp_path / "run"
        code = run(["verify", "--dataset", "ba-shapes", "--base-nodes", "12",
                    "--motifs", "2", "--seed", "5", "--hidden-dim", "16",
                    "--epochs", "600", "--steps", "60", "--scorer", "is",
                    "--g-max", "1", "--min-class-count", "1",
                    "--test-fraction", "0.3", "--out", str(out)])
        assert code == 0
        assert (out / "results.csv").exists()
        assert (out / "plotdata.csv").exists()
        assert (out / "bundle.json").exists()
        header = (out / "results.csv").read_text().splitlines()[0]
        assert header == "scorer,i,class,b,c,statistic,p_value,reported_statistic"

    def test_report_regenerates_from_bundle(self, tmp_path):
        out = tmp_path / "run"
        assert run(["verify", "--dataset", "ba-shapes", "--base-nodes", "12",
                    "--motifs", "2", "--seed", "5", "--hidden-dim", "16",
                    "--epochs", "600", "--steps", "60", "--scorer", "is",
                    "--g-max", "1", "--min-class-count", "1",
                    "--test-fraction", "0.3", "--out", str(out)]) == 0
        redo = tmp_path / "redo"
        assert run(["report", "--bundle", str(out / "bundle.json"),
                    "--out", str(redo)]) == 0
        assert (redo / "results.csv").read_bytes() == \
               (out / "results.csv").read_bytes()
        assert (redo / "plotdata.csv").read_bytes() == \
               (out / "plotdata.csv").read_bytes()
