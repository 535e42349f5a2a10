import json

import numpy as np
import pytest

from ovreserve.auction import Dataset, InvalidBidsError, pct_of_max
from ovreserve.baselines import ScalarPolicy
from ovreserve.harness import (
    AllPointsFailedError,
    DatasetFormatError,
    ExperimentConfig,
    Grids,
    KindMismatchError,
    PredictorFormatError,
    Standardizer,
    grid_search,
    load_dataset,
    load_predictor,
    replication_seeds,
    run_experiment,
    save_dataset,
    save_predictor,
    write_report,
)
from ovreserve.predictors import KernelPredictor, LinearPredictor, NeuralPredictor
from ovreserve.simdata import SimConfig, gen_simulated, split


def test_load_minimal(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("f1,f2,B,b\n1.0,2.0,5.0,2.5\n")
    d = load_dataset(f)
    assert len(d) == 1 and d.dim == 2
    assert d.highest[0] == 5.0 and d.second[0] == 2.5
    assert d.features.tolist() == [[1.0, 2.0]]


def test_load_scientific_and_column_order(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("B,f1,b\n5e0,1.5E-3,2.5\n")
    d = load_dataset(f)
    assert d.features[0, 0] == 1.5e-3 and d.highest[0] == 5.0


@pytest.mark.parametrize(
    "body, err, line",
    [
        ("f1,B,b\n1,5,2\n1,2,3\n", InvalidBidsError, "line 3"),
        ("f1,B,b\n1,5,2\n1,x,1\n", DatasetFormatError, "line 3"),
        ("f1,B,b\n1,5,2\n1,5\n", DatasetFormatError, "line 3"),
        ("f1,f2\n1,2\n", DatasetFormatError, "line 1"),
        ("", DatasetFormatError, "line 1"),
    ],
)
def test_load_errors(tmp_path, body, err, line):
    f = tmp_path / "d.csv"
    f.write_text(body)
    with pytest.raises(err, match=line):
        load_dataset(f)


def test_dataset_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    B = rng.lognormal(3, 2, 300)
    d = Dataset(rng.normal(size=(300, 4)) * 10.0 ** rng.integers(-8, 8, (300, 4)), B, B * rng.uniform(size=300))
    f = tmp_path / "rt.csv"
    save_dataset(d, f)
    raw = f.read_bytes()
    assert raw.startswith(b"f1,f2,f3,f4,B,b\n") and b"\r" not in raw
    assert load_dataset(f) == d


def test_standardizer_fit_on_train_only():
    d = gen_simulated(SimConfig(n_total=600, seed=1))
    tr, va, _ = split(d, 400, 200, 0, 0)
    st = Standardizer.fit(tr)
    trs, vas = st.apply(tr), st.apply(va)
    np.testing.assert_allclose(trs.features.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(trs.features.std(axis=0), 1, rtol=1e-12)
    np.testing.assert_allclose(vas.features, (va.features - tr.features.mean(0)) / tr.features.std(0), rtol=1e-12)


def _roundtrip(p, tmp_path, X):
    f = tmp_path / "p.json"
    save_predictor(p, f)
    q = load_predictor(f)
    assert type(q) is type(p)
    np.testing.assert_array_equal(q.predict(X), p.predict(X))
    return f


def test_predictor_round_trips(tmp_path):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(100, 5))
    _roundtrip(LinearPredictor(rng.normal(size=5) / 3, np.pi), tmp_path, X)
    _roundtrip(NeuralPredictor(rng.normal(size=(5, 5)), rng.normal(size=5), rng.normal(size=5), 0.1), tmp_path, X)
    _roundtrip(ScalarPolicy(1 / 3), tmp_path, X)
    f = _roundtrip(KernelPredictor(rng.normal(size=20), rng.normal(size=(20, 5)), 4), tmp_path, X)
    with pytest.raises(KindMismatchError):
        load_predictor(f, kind="linear")


def test_malformed_predictor_files(tmp_path):
    f = tmp_path / "p.json"
    f.write_text("{not json")
    with pytest.raises(PredictorFormatError):
        load_predictor(f)
    f.write_text(json.dumps({"format": "ovreserve-predictor", "kind": "linear", "dim": 3, "weights": [1, 2]}))
    with pytest.raises(PredictorFormatError):
        load_predictor(f)
    f.write_text(json.dumps({"format": "ovreserve-predictor", "kind": "tree"}))
    with pytest.raises(PredictorFormatError):
        load_predictor(f)


@pytest.fixture(scope="module")
def small_split():
    d = gen_simulated(SimConfig(n_total=400, seed=4))
    return split(d, 200, 100, 100, 0)


def _small_grids(**kw):
    base = dict(sigma=[0.1], lam=[0.01], max_iters=15)
    base.update(kw)
    return Grids(**base)


def test_grid_singleton(small_split):
    tr, va, _ = small_split
    res = grid_search("ov-linear", _small_grids(), tr, va)
    assert res.params["lam"] == 0.01 and res.params["sigma_grid"] == 0.1
    assert res.params["sigma"] == pytest.approx(0.1 * np.std(tr.highest))


def test_grid_winner_dominates_and_dominated_point_is_harmless(small_split):
    tr, va, _ = small_split
    g = _small_grids(sigma=[0.05, 0.5], lam=[0.001, 0.1])
    res = grid_search("ov-linear", g, tr, va)
    for s in g.sigma:
        for lam in g.lam:
            other = grid_search("ov-linear", _small_grids(sigma=[s], lam=[lam]), tr, va)
            assert res.valid_revenue >= other.valid_revenue
    # add a point with a huge penalty: it cannot beat the winner
    res2 = grid_search("ov-linear", _small_grids(sigma=g.sigma, lam=g.lam + [1e6]), tr, va)
    assert res2.valid_revenue == res.valid_revenue


def test_grid_ties_prefer_small_lambda_then_sigma():
    # all bids equal: every model that predicts inside [b, B] earns the same
    d = Dataset(np.zeros((30, 1)), np.ones(30), np.ones(30))
    res = grid_search("ov-linear", Grids(sigma=[0.5, 0.1], lam=[1.0, 0.1], max_iters=3), d, d)
    assert res.params["lam"] == 0.1 and res.params["sigma_grid"] == 0.1


def test_grid_baselines_and_errors(small_split):
    tr, va, _ = small_split
    assert grid_search("nof", Grids(), tr, va).predictor.kind == "scalar"
    assert grid_search("zero", Grids(), tr, va).predictor.reserve == 0.0
    with pytest.raises(ValueError):
        grid_search("ov-forest", Grids(), tr, va)
    with pytest.raises(ValueError):
        grid_search("ov-linear", Grids(sigma=[]), tr, va)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_grid_all_points_failed(small_split):
    tr, va, _ = small_split
    # squared features overflow, so no grid point can factor its system
    huge = tr.with_features(tr.features * 1e200)
    with pytest.raises(AllPointsFailedError):
        grid_search("ov-linear", _small_grids(sigma=[0.1, 1.0]), huge, va.with_features(va.features * 1e200))


def test_grid_kernel_degree_suffix(small_split):
    tr, va, _ = small_split
    res = grid_search("ov-kernel:4", _small_grids(degree=[2]), tr, va)
    assert res.params["degree"] == 4 and res.predictor.degree == 4


def test_experiment_zero_reports_half(tmp_path):
    cfg = ExperimentConfig(methods=["zero"], replications=1, n_train=100, n_valid=50, n_test=50,
                           data={"simulated": {"n_total": 200}})
    rep = run_experiment(cfg)
    assert rep.results["zero"].test_pct == [pytest.approx(50.0, rel=1e-14)]
    assert rep.results["zero"].stderr == 0.0


def test_experiment_zero_on_file_is_bid_ratio(tmp_path):
    rng = np.random.default_rng(3)
    B = rng.uniform(1, 10, 60)
    d = Dataset(rng.normal(size=(60, 2)), B, B * rng.uniform(size=60))
    f = tmp_path / "d.csv"
    save_dataset(d, f)
    cfg = ExperimentConfig(methods=["zero"], replications=1, n_train=30, n_valid=10, n_test=20, data={"path": str(f)})
    rep = run_experiment(cfg)
    split_seed = int(np.random.SeedSequence(rep.seeds[0]).spawn(2)[1].generate_state(1)[0])
    _, _, te = split(d, 30, 10, 20, split_seed)
    assert rep.results["zero"].test_pct[0] == pytest.approx(100 * te.second.sum() / te.highest.sum(), rel=1e-14)
    assert rep.results["zero"].test_pct[0] == pct_of_max(np.zeros(20), te)


def test_experiment_stats_and_determinism(tmp_path):
    cfg = ExperimentConfig(methods=["nof", "ov-linear"], replications=3, n_train=150, n_valid=75, n_test=75,
                           data={"simulated": {"n_total": 300}}, grids={"sigma": [0.1], "lam": [0.01], "max_iters": 10})
    r1, r2 = run_experiment(cfg), run_experiment(cfg)
    assert r1.to_dict() == r2.to_dict()
    for m, res in r1.results.items():
        v = np.array(res.test_pct)
        assert res.stderr == pytest.approx(v.std(ddof=1) / np.sqrt(3), rel=1e-14)
        assert 0 <= res.mean <= 100 and res.stderr >= 0
        assert len(res.chosen) == 3
    p1 = write_report(r1, tmp_path / "a")
    p2 = write_report(r2, tmp_path / "b")
    for key in ("results", "replications", "fig_replications"):
        assert p1[key].read_bytes() == p2[key].read_bytes()
    assert "timings" in p1 and "fit" in json.loads(p1["timings"].read_text())["nof"]


def test_experiment_config_validation(tmp_path):
    with pytest.raises(ValueError):
        ExperimentConfig(methods=["nope"])
    with pytest.raises(ValueError):
        ExperimentConfig(replications=0)
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        ExperimentConfig(grids={"sigmas": [1]})
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"methods": "nof,zero", "replications": 2}))
    assert ExperimentConfig.from_file(f).methods == ["nof", "zero"]


def test_replication_seeds_distinct():
    s = replication_seeds(0, 10)
    assert len(set(s)) == 10 and s == replication_seeds(0, 10)
