import json

import numpy as np
import pytest

import ega_adapter as ega


def test_synthetic_rows_are_unit_norm():
    s = ega.gen_synthetic(16, 4, 10, 0.1, seed=3)
    assert len(s) == 40 and s.dim == 16
    np.testing.assert_allclose(np.linalg.norm(s.vectors, axis=1), 1.0, atol=1e-6)
    assert sorted(set(s.labels.tolist())) == [0, 1, 2, 3]


def test_identity_at_init():
    cfg = ega.AdapterConfig()
    cfg.dim = 32
    cfg.hidden = 128
    z = ega.gen_synthetic(32, 5, 20, 0.1).vectors
    np.testing.assert_allclose(ega.Adapter(cfg)(z), z, atol=1e-6)


def test_param_count_at_full_size():
    a = ega.Adapter(ega.AdapterConfig())
    assert a.param_count == 4_725_504
    assert a.slice_names[-2:] == ["refine.weight", "refine.bias"]


def test_train_and_evaluate_roundtrip(tmp_path):
    data = ega.gen_synthetic(16, 5, 40, 0.3, seed=1)
    split = ega.make_split(data, "ood", seed=1)
    tc = ega.TrainConfig()
    tc.epochs = 3
    ac = ega.AdapterConfig()
    ac.dim = 16
    ac.hidden = 64
    adapter, telemetry = ega.train(data.subset(split.train), tc, ac)
    assert len(telemetry["epoch_mean_rho"]) == 3
    assert np.all((telemetry["rho"] >= 0) & (telemetry["rho"] <= 1))

    path = tmp_path / "a.egap"
    ega.save_params(adapter, path)
    again = ega.load_params(path)
    np.testing.assert_array_equal(again.params, adapter.params)

    db, q = data.subset(split.database), data.subset(split.queries)
    opts = ega.EvalOptions()
    opts.nlist = 5
    opts.nprobes = [1, 5]
    report = ega.evaluate_retrieval(ega.apply_adapter(adapter, db), ega.apply_adapter(adapter, q), opts)
    assert 0.0 <= report.lp(1, 1) <= 1.0
    assert report.ar(10, 5) == 1.0
    assert len(json.loads(report.to_json())["grid"]) == 8


def test_index_matches_brute_force_with_all_lists():
    data = ega.gen_synthetic(8, 4, 50, 0.4, seed=9)
    base, queries = data.subset(list(range(0, 200, 2))), data.subset(list(range(1, 200, 2)))
    index = ega.IvfIndex.build(base, 6)
    exact = ega.brute_force_knn(base, queries, 5)
    assert index.search(queries, 5, 6).indices == exact.indices
    assert ega.anns_recall(index.search(queries, 5, 6), exact, 5) == 1.0


def test_errors_are_typed(tmp_path):
    with pytest.raises(ega.DataError):
        ega.load_embeddings(tmp_path / "missing.egae")
    with pytest.raises(ega.ConfigError):
        ega.make_split(ega.gen_synthetic(4, 2, 4, 0.1), "sideways")


def test_cli_entry_point(tmp_path):
    code, _ = ega.run_cli(["--log-level", "off", "gen", "--d", "8", "--classes", "3",
                           "--per-class", "5", "--out", str(tmp_path / "s.egae")])
    assert code == 0
    assert len(ega.load_embeddings(tmp_path / "s.egae")) == 15
    assert ega.run_cli(["train", "--bogus"])[0] == 2


def test_linear_demo_bound_holds():
    r = ega.linear_illustration()
    assert r["bound_holds"]
    assert r["csv"].startswith("step,")
