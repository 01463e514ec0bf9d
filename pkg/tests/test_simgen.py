import csv
import json

import numpy as np
import pytest

from bdbc.metrics import partition_match
from bdbc.simgen import (
    ScenarioSpec,
    make_mape_design,
    make_random_block_cov,
    make_scenario1,
    make_scenario2,
    make_sigma_A,
    make_sigma_B,
    run_one,
    run_replicates,
    sample_mixture,
    sample_mvn,
)


def test_sample_mvn_law_of_large_numbers():
    cov = np.array([[2.0, 0.6], [0.6, 1.0]])
    x = sample_mvn([1.0, -2.0], cov, 100000, 0).values
    np.testing.assert_allclose(x.mean(axis=0), [1.0, -2.0], atol=0.02)
    np.testing.assert_allclose(np.cov(x.T), cov, atol=0.03)


def test_sample_mvn_shapes_and_determinism():
    assert sample_mvn(np.zeros(3), np.eye(3), 1, 5).values.shape == (1, 3)
    a = sample_mvn(np.zeros(3), np.eye(3), 10, 5).values
    b = sample_mvn(np.zeros(3), np.eye(3), 10, 5).values
    np.testing.assert_array_equal(a, b)
    c = sample_mvn(np.zeros(3), np.eye(3), 10, 6).values
    assert not np.array_equal(a, c)


def test_sigma_a_entries():
    cov, g = make_sigma_A()
    assert cov[0, 0] == 4.5 and cov[0, 1] == 2.0 and cov[6, 7] == 2.0
    assert cov[0, 3] == 0.0 and cov[2, 6] == 0.0
    assert g.canonical() == ((0, 1, 2), (3, 4, 5), (6, 7))
    assert np.linalg.eigvalsh(cov).min() > 0


def test_sigma_b_entries():
    cov, g = make_sigma_B()
    assert cov[0, 1] == -2.0 and cov[0, 2] == 1.0 and cov[6, 6] == 3.0
    np.testing.assert_array_equal(cov, cov.T)
    assert partition_match(g, make_sigma_A()[1])
    assert np.linalg.eigvalsh(cov).min() > 0


@pytest.mark.parametrize("sign, off", [("pos", 2.0), ("neg", -1.0)])
def test_mape_design(sign, off):
    mean, cov, g = make_mape_design(sign)
    np.testing.assert_array_equal(mean, np.arange(1, 13))
    assert cov[0, 1] == off and cov[0, 4] == 0.0 and np.all(np.diag(cov) == 4.5)
    assert g.sizes().tolist() == [4, 4, 4]
    assert np.linalg.eigvalsh(cov).min() > 0


def test_scenario1_parameters():
    comps = make_scenario1()
    assert len(comps) == 3
    np.testing.assert_array_equal(comps[0].mean, np.arange(-5, 3))
    np.testing.assert_array_equal(comps[0].cov[6:, 6:], [[3.5, 3.0], [3.0, 3.9]])
    assert [c.grouping.sizes().tolist() for c in comps] == [[3, 3, 2], [3, 3, 2], [5, 3]]
    for c in comps:
        assert np.linalg.eigvalsh(c.cov).min() > 0
        assert c.weight == pytest.approx(1 / 3)


def test_scenario2_is_psd_and_seeded():
    a = make_scenario2(3)
    b = make_scenario2(3)
    for ca, cb in zip(a, b):
        np.testing.assert_array_equal(ca.cov, cb.cov)
        assert np.linalg.eigvalsh(ca.cov).min() >= -1e-10


def test_sample_mixture_layout():
    data, labels = sample_mixture(make_scenario1(), 20, 1)
    assert data.values.shape == (60, 8)
    np.testing.assert_array_equal(labels, np.repeat([0, 1, 2], 20))


def test_random_block_cov_structure():
    cov, g = make_random_block_cov(24, 3, 0)
    assert g.sizes().tolist() == [8, 8, 8]
    assert np.linalg.eigvalsh(cov).min() > 0
    clean, g0 = make_random_block_cov(24, 3, 0, noise_weight=0.0)
    mask = g0.same_group_mask()
    assert np.all(clean[~mask] == 0)
    with pytest.raises(ValueError):
        make_random_block_cov(24, 5)


def test_scenario_spec_validation():
    assert ScenarioSpec("sigmaA").p == 8
    with pytest.raises(ValueError):
        ScenarioSpec("nope")
    with pytest.raises(ValueError):
        ScenarioSpec("grid_cell", p=24)
    with pytest.raises(ValueError):
        ScenarioSpec.from_dict({"name": "sigmaA", "colour": 1})
    spec = ScenarioSpec.from_dict({"name": "grid_cell", "p": 24, "k": 3, "n_per_component": 50})
    assert ScenarioSpec.from_dict(spec.to_dict()) == spec


def test_zero_replicates():
    res = run_replicates(ScenarioSpec("sigmaA"), ["hierarchical"], 0, workers=1)
    assert res.records == [] and res.aggregate() == {}


def test_replicates_are_scheduling_independent(tmp_path):
    spec = ScenarioSpec("grid_cell", n_per_component=50, seed=3, p=24, k=3)
    serial = run_replicates(spec, ["hierarchical", "greedy"], 6, workers=1)
    parallel = run_replicates(spec, ["hierarchical", "greedy"], 6, workers=2)
    assert serial.to_dict(timing=False) == parallel.to_dict(timing=False)
    assert [r.assignment for r in serial.records] == [r.assignment for r in parallel.records]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    serial.write_json(a, timing=False)
    parallel.write_json(b, timing=False)
    assert a.read_bytes() == b.read_bytes()


def test_methods_share_replicate_data():
    spec = ScenarioSpec("mape_pos", n_per_component=300)
    h = run_one(spec, "hierarchical", 0)
    g = run_one(spec, "greedy", 0)
    assert h.mape_mle == g.mape_mle


def test_csv_and_aggregate(tmp_path):
    res = run_replicates(ScenarioSpec("sigmaA", n_per_component=200), ["hier"], 5, workers=1)
    agg = res.aggregate()["hierarchical"]
    assert agg["replicates"] == 5 and 0 <= agg["accuracy"] <= 1
    path = tmp_path / "r.csv"
    res.write_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 5 and rows[0]["method"] == "hierarchical"
    assert len(rows[0]["assignment"].split()) == 8


def test_unknown_k_records_selection():
    rec = run_one(ScenarioSpec("grid_cell", n_per_component=50, p=24, k=3, unknown_k=True), "hierarchical", 0)
    assert rec.selected is not None and 2 <= rec.selected <= 12


def test_mixture_replicate():
    rec = run_one(ScenarioSpec("scenario1", n_per_component=100), "hierarchical", 0, {"select_g": {"g_range": [2, 3]}})
    assert rec.selected in (2, 3)
    assert json.dumps(rec.__dict__)
