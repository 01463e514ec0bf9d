import csv
import json

import numpy as np
import pytest

from bdbc.cli import main


@pytest.fixture
def sigma_a_csv(tmp_path):
    path = tmp_path / "a.csv"
    assert main(["simulate", "--scenario", "sigmaA", "--n", "400", "--reps", "0", "--write-data", str(path), "--out-json", str(tmp_path / "s.json")]) == 0
    return path


@pytest.fixture
def scenario1_csv(tmp_path):
    path = tmp_path / "mix.csv"
    assert main(["simulate", "--scenario", "scenario1", "--n", "300", "--reps", "0", "--write-data", str(path), "--out-json", str(tmp_path / "m.json")]) == 0
    return path


def test_estimate_cov(tmp_path, sigma_a_csv):
    out, cov = tmp_path / "e.json", tmp_path / "cov.csv"
    assert main(["estimate-cov", "--input", str(sigma_a_csv), "--k", "3", "--output", str(out), "--cov-out", str(cov)]) == 0
    res = json.loads(out.read_text())
    assert sorted(np.bincount(res["assignment"]).tolist()) == [2, 3, 3]
    assert res["columns"] == [f"x{j}" for j in range(1, 9)]
    assert "wall_time" not in out.read_text()
    assert json.loads((tmp_path / "e.json.meta.json").read_text())["wall_time"] >= 0
    rows = list(csv.reader(open(cov)))
    assert len(rows) == 9 and rows[0][0] == "x1"


@pytest.mark.parametrize("method", ["greedy", "convex", "hier"])
def test_estimate_cov_methods_are_reproducible(tmp_path, sigma_a_csv, method):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        assert main(["estimate-cov", "--input", str(sigma_a_csv), "--k", "3", "--method", method, "--output", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_estimate_cov_k_auto(tmp_path, sigma_a_csv):
    out = tmp_path / "k.json"
    assert main(["estimate-cov", "--input", str(sigma_a_csv), "--k-auto", "--k-range", "2-5", "--standardize", "--output", str(out)]) == 0
    res = json.loads(out.read_text())
    assert [s[0] for s in res["k_scores"]] == [2, 3, 4, 5]


def test_fit_scenario1(tmp_path, scenario1_csv):
    out, resp = tmp_path / "fit.json", tmp_path / "resp.csv"
    argv = ["fit", "--input", str(scenario1_csv), "--label-column", "label", "--g", "3", "--k", "3", "--output", str(out), "--responsibilities", str(resp)]
    assert main(argv) == 0
    res = json.loads(out.read_text())
    groupings = res["model"]["groupings"]
    assert len(groupings) == 3 and all(len(g["assignment"]) == 8 for g in groupings)
    assert res["evaluation"]["ari"] > 0.9
    first = out.read_bytes()
    assert main(argv) == 0
    assert out.read_bytes() == first
    rows = list(csv.reader(open(resp)))
    assert rows[0] == ["component_0", "component_1", "component_2"] and len(rows) == 901


def test_fit_g_range_selection(tmp_path, scenario1_csv):
    out = tmp_path / "sel.json"
    assert main(["fit", "--input", str(scenario1_csv), "--label-column", "label", "--g-range", "2-4", "--k", "3", "--output", str(out)]) == 0
    res = json.loads(out.read_text())
    assert [r["g"] for r in res["selection"]] == [2, 3, 4]
    assert res["g"] == 3


def test_fit_anova(tmp_path, scenario1_csv):
    out = tmp_path / "an.json"
    assert main(["fit", "--input", str(scenario1_csv), "--label-column", "label", "--anova-k", "4", "--g", "3", "--k", "2", "--output", str(out)]) == 0
    assert len(json.loads(out.read_text())["columns"]) == 4


def test_simulate_outputs_are_byte_identical(tmp_path):
    paths = []
    for tag in "ab":
        js, cs = tmp_path / f"{tag}.json", tmp_path / f"{tag}.csv"
        argv = ["simulate", "--scenario", "grid_cell", "--p", "24", "--k", "3", "--n", "50", "--reps", "4", "--method", "hier,greedy", "--seed", "9", "--out-json", str(js), "--out-csv", str(cs)]
        assert main(argv) == 0
        paths.append((js, cs))
    assert paths[0][0].read_bytes() == paths[1][0].read_bytes()
    res = json.loads(paths[0][0].read_text())
    assert set(res["aggregate"]) == {"hierarchical", "greedy"}
    assert len(list(csv.DictReader(open(paths[0][1])))) == 8


def test_simulate_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scenario": {"name": "mape_pos", "n_per_component": 300}, "methods": ["hierarchical"], "replicates": 2}))
    out = tmp_path / "o.json"
    assert main(["simulate", "--config", str(cfg), "--out-json", str(out)]) == 0
    agg = json.loads(out.read_text())["aggregate"]["hierarchical"]
    assert agg["mape_mean"] < agg["mape_mle_mean"]
    cfg.write_text(json.dumps({"scenario": {"name": "mape_pos"}, "colour": 1}))
    assert main(["simulate", "--config", str(cfg)]) == 1


def test_evaluate(tmp_path, capsys):
    t, p = tmp_path / "t.txt", tmp_path / "p.txt"
    t.write_text("0\n0\n1\n1\n")
    p.write_text("1\n1\n0\n0\n")
    assert main(["evaluate", "--truth", str(t), "--pred", str(p)]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["ari"] == 1.0 and res["accuracy"] == 1.0
    tc, ec = tmp_path / "tc.csv", tmp_path / "ec.csv"
    tc.write_text("1,0\n0,1\n")
    ec.write_text("1.1,0\n0,1.1\n")
    assert main(["evaluate", "--truth-cov", str(tc), "--est-cov", str(ec), "--no-header"]) == 0
    assert json.loads(capsys.readouterr().out)["mape"] == pytest.approx(10.0)


def test_topics(tmp_path):
    corpus = tmp_path / "reviews.csv"
    rng = np.random.default_rng(0)
    good = ["tasty", "fresh", "friendly", "lovely", "great"]
    bad = ["cold", "rude", "slow", "dirty", "awful"]
    with open(corpus, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["text", "stars"])
        for i in range(40):
            words = good if i % 2 else bad
            w.writerow([" ".join(rng.choice(words, 6)) + " food", 5 if i % 2 else 1])
        w.writerow(["!!", 3])
    out = tmp_path / "topics"
    argv = ["topics", "--input", str(corpus), "--rating-column", "stars", "--top-tf", "8", "--select-k", "6", "--g", "2", "--k", "2", "--out-dir", str(out)]
    assert main(argv) == 0
    fit = json.loads((out / "fit.json").read_text())
    assert len(fit["columns"]) == 6 and len(fit["documents"]) == 40
    heat = json.loads((out / "heatmap.json").read_text())
    assert heat["cells"]
    assert (out / "tfidf.csv").exists() and (out / "heatmap.csv").exists()


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["estimate-cov", "--input", "missing.csv", "--k", "2"],
        ["fit", "--input", "missing.csv", "--g", "2", "--g-range", "1-3"],
        ["fit", "--input", "missing.csv", "--g", "0"],
        ["simulate"],
        ["simulate", "--scenario", "grid_cell"],
        ["simulate", "--scenario", "sigmaA", "--method", "lasso"],
        ["evaluate", "--truth", "x"],
        ["estimate-cov", "--input", "x", "--k", "2", "--omega", "-1"],
        ["nonsense"],
    ],
)
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    assert "error" in capsys.readouterr().err


def test_estimate_cov_k_too_large(sigma_a_csv):
    assert main(["estimate-cov", "--input", str(sigma_a_csv), "--k", "9"]) == 1


def test_bad_cell_exit_1(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\nx,3\n")
    assert main(["estimate-cov", "--input", str(path), "--k", "1"]) == 1
    assert "(2, 1)" in capsys.readouterr().err


def test_numerical_failure_exit_2(tmp_path, capsys):
    path = tmp_path / "big.csv"
    path.write_text("a,b\n1e200,0\n-1e200,1\n3e200,2\n")
    assert main(["estimate-cov", "--input", str(path), "--k", "1"]) == 2
    assert "numerical" in capsys.readouterr().err
