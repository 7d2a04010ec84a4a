import json

import numpy as np
import pytest

from fidelity_audit.errors import ConfigInvalid
from fidelity_audit.runner import (
    ExperimentConfig,
    ReportBundle,
    emit_plot_data,
    load_config,
    read_plot_data,
    run_audit,
    run_sweep,
    sweep_config,
)


def small_config(**overrides):
    d = {
        "name": "small",
        "dataset": {"synthetic": "two_regime", "params": {"n": 600, "seed": 0}},
        "blackbox": {"family": "logistic", "tune": False},
        "explainers": [
            {"name": "lime", "n_perturbations": 300},
            {"name": "tree", "max_depth": 3},
            {"name": "gam"},
        ],
        "seeds": [0, 1, 2, 3, 4],
        "max_points": 30,
    }
    d.update(overrides)
    return ExperimentConfig.from_dict(d)


@pytest.fixture(scope="module")
def bundle():
    return run_audit(small_config())


def test_missing_dataset_rejected_before_training(tmp_path):
    d = {"name": "x", "dataset": {"path": "nope.csv", "schema": "nope.json"},
         "blackbox": {"family": "logistic"}, "explainers": [{"name": "lime"}]}
    with pytest.raises(ConfigInvalid):
        ExperimentConfig.from_dict(d, base_dir=tmp_path)


@pytest.mark.parametrize("patch", [
    {"seeds": [0, 0]},
    {"seeds": []},
    {"metrics": ["precision"]},
    {"blackbox": {"family": "forest"}},
    {"explainers": []},
    {"explainers": [{"name": "lime"}, {"name": "lime"}]},
    {"sweep": {"param": "alpha", "values": [1]}},
    {"colour": "blue"},
])
def test_invalid_configs(patch):
    with pytest.raises(ConfigInvalid):
        small_config(**patch)


def test_every_explainer_once_per_seed(bundle):
    pairs = [(c["explainer"], c["seed"]) for c in bundle.cells]
    assert len(pairs) == len(set(pairs)) == 3 * 5
    assert all(c["status"] == "ok" for c in bundle.cells)
    assert [b["seed"] for b in bundle.blackbox] == [0, 1, 2, 3, 4]
    assert bundle.provenance["seeds"] == [0, 1, 2, 3, 4]
    assert len(bundle.provenance["config_hash"]) == 64


def test_summary_mean_std(bundle):
    row = next(r for r in bundle.summary
               if r["explainer"] == "tree" and r["metric"] == "accuracy" and r["stat"] == "delta")
    vals = bundle.values("tree", "accuracy", "delta")
    assert row["n"] == 5
    assert row["mean"] == pytest.approx(np.mean(vals))
    assert row["std"] == pytest.approx(np.std(vals))
    assert 0.0 < row["p_value"] <= 1.0


def test_preservation_recorded(bundle):
    for c in bundle.cells:
        assert c["preservation"]["abs_diff"] < 1e-10


def test_rerun_identical_modulo_timestamps(bundle, tmp_path):
    again = run_audit(small_config(), threads=3)
    assert again.without_timestamps() == bundle.without_timestamps()
    path = bundle.save(tmp_path / "b.json")
    assert ReportBundle.load(path).without_timestamps() == bundle.without_timestamps()


def test_plot_data_cardinality_and_roundtrip(bundle, tmp_path):
    paths = emit_plot_data(bundle, tmp_path)
    rows = read_plot_data(paths["fidelity"])
    per_explainer = [r for r in rows if r["explainer"] == "lime"]
    assert len(per_explainer) == 2 * 3 * 5
    for r in rows:
        rep = bundle.cell(r["explainer"], r["seed"])["gaps"][r["metric"]]
        assert r["value"] == rep["per_group"].get(str(r["group"]))
    gaps = read_plot_data(paths["gaps"])
    for r in gaps:
        rep = bundle.cell(r["explainer"], r["seed"])["gaps"][r["metric"]]
        for k in ("overall", "delta", "delta_group", "argmax_group"):
            assert r[k] == rep[k]


def test_plot_data_empty_cells(tmp_path):
    cell = {"seed": 0, "explainer": "e", "status": "ok",
            "gaps": {"auroc": {"per_group": {"0": 0.9}, "overall": 0.9, "delta": None,
                               "argmax_group": None, "delta_group": None}}}
    b = ReportBundle({"blackbox": {"family": "mlp"}},
                     {"dataset": "d", "group_levels": ["a", "b"]}, [cell], [])
    paths = emit_plot_data(b, tmp_path)
    text = paths["fidelity"].read_text().splitlines()
    assert text[2].endswith(",")  # group 1 has no value
    assert read_plot_data(paths["fidelity"])[1]["value"] is None
    assert read_plot_data(paths["gaps"])[0]["delta"] is None
    with pytest.raises(ValueError):
        emit_plot_data(ReportBundle({}, {}, [], []), tmp_path)


def test_per_cell_error_recorded():
    cfg = small_config(explainers=[{"name": "lime", "n_perturbations": 50},
                                   {"name": "bad", "method": "lime", "sigma": -1.0}],
                       seeds=[0])
    b = run_audit(cfg)
    assert b.cell("lime", 0)["status"] == "ok"
    bad = b.cell("bad", 0)
    assert bad["status"] == "error" and bad["error"]["type"]


def test_single_value_sweep_matches_audit():
    cfg = small_config(seeds=[0, 1])
    records = run_sweep(cfg, "max_depth", [3])
    b = run_audit(sweep_config(cfg, "max_depth", 3))
    tree = [r for r in records if r["explainer"] == "tree"]
    assert len(tree) == 2 * 3 * 2
    for r in tree:
        assert r["fidelity"] == b.cell("tree", r["seed"])["gaps"][r["metric"]]["per_group"][str(r["group"])]
    with pytest.raises(ConfigInvalid):
        run_sweep(cfg, "max_depth", [])


def test_k_sweep_series_per_explainer_group():
    cfg = small_config(seeds=[0], explainers=[{"name": "lime", "n_perturbations": 200}],
                       metrics=["accuracy"])
    records = run_sweep(cfg, "k", [1, 2])
    series = {(r["explainer"], r["group"]) for r in records}
    assert series == {("lime", 0), ("lime", 1)}
    assert sorted({r["value"] for r in records}) == [1, 2]


def test_yaml_and_json_configs(tmp_path):
    d = small_config().to_dict()
    (tmp_path / "c.json").write_text(json.dumps(d))
    import yaml

    (tmp_path / "c.yaml").write_text(yaml.safe_dump(d))
    a, b = load_config(tmp_path / "c.json"), load_config(tmp_path / "c.yaml")
    assert a.digest() == b.digest()
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigInvalid):
        load_config(tmp_path / "bad.json")
    with pytest.raises(ConfigInvalid):
        load_config(tmp_path / "missing.json")


def test_max_depth_none_is_uncapped():
    cfg = small_config(seeds=[0], explainers=[{"name": "tree", "max_depth": None},
                                              {"name": "tuned", "method": "tree"}])
    b = run_audit(cfg)
    assert b.cell("tree", 0)["info"]["max_depth"] is None
    assert "depth_scores" in b.cell("tuned", 0)["info"]
