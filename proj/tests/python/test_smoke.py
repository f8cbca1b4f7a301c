"""End-to-end smoke coverage for the python bindings.

The heavy numerical checks live in the native test binaries; these tests pin
the binding surface: conversions, determinism across the language boundary,
and the fixture-mode pipeline helpers.
"""

import json
import math
import os
import re
import subprocess

import numpy as np
import pytest

import geosearch as gs

MAKE_DEMO_BIN = os.environ.get("MAKE_DEMO_BIN", "")

needs_demo_bin = pytest.mark.skipif(
    not MAKE_DEMO_BIN, reason="MAKE_DEMO_BIN not set (run under ctest)"
)


@pytest.fixture(scope="module")
def demo_suite(tmp_path_factory):
    root = tmp_path_factory.mktemp("suite")
    out = subprocess.run(
        [
            MAKE_DEMO_BIN,
            "--dir", str(root),
            "--queries", "6",
            "--db-size", "18",
            "--visual-dim", "10",
            "--embed-dim", "6",
            "--seed", "3",
        ],
        capture_output=True,
        text=True,
        check=True,
    )
    info = json.loads(out.stdout)
    return {"root": root, "config": info["config"], "queries": info["queries"]}


def test_version_and_surface():
    assert re.fullmatch(r"\d+\.\d+\.\d+", gs.__version__)
    assert gs.EARTH_MEAN_RADIUS_KM == pytest.approx(6371.0088)
    assert gs.WGS84_SEMI_MAJOR_A == 6378137.0


def test_coordinate_normalization():
    c = gs.GpsCoordinate(10.0, 190.0)
    assert c.latitude == 10.0
    assert c.longitude == -170.0
    assert gs.GpsCoordinate(0.0, -180.0).longitude == 180.0
    assert gs.GpsCoordinate.normalize_lon_deg(540.0) == 180.0
    with pytest.raises(ValueError):
        gs.GpsCoordinate(90.5, 0.0)
    with pytest.raises(ValueError):
        gs.GpsCoordinate(0.0, float("nan"))
    assert "GpsCoordinate(48.5, 2.5)" == repr(gs.GpsCoordinate(48.5, 2.5))


def test_geodesic_distance():
    a = gs.GpsCoordinate(0.0, 0.0)
    b = gs.GpsCoordinate(0.0, 90.0)
    quarter = math.pi / 2.0 * gs.EARTH_MEAN_RADIUS_KM
    assert gs.geodesic_distance_km(a, b) == pytest.approx(quarter, rel=1e-12)
    assert gs.geodesic_distance_km(a, a) == 0.0
    assert gs.geodesic_distance_km(a, b) == gs.geodesic_distance_km(b, a)


def test_ecef_projection():
    p = gs.ecef_project(gs.GpsCoordinate(0.0, 0.0))
    assert (p.x, p.y, p.z) == (gs.WGS84_SEMI_MAJOR_A, 0.0, 0.0)
    b = gs.WGS84_SEMI_MAJOR_A * math.sqrt(1.0 - gs.WGS84_ECCENTRICITY_SQ)
    for lat, lon in [(45.0, 12.0), (-33.0, 151.0), (89.0, -70.0)]:
        n = gs.ecef_project(gs.GpsCoordinate(lat, lon)).norm()
        assert b - 1e-6 <= n <= gs.WGS84_SEMI_MAJOR_A + 1e-6


def test_token_estimate():
    assert gs.estimate_tokens(0, 0) == 462
    assert gs.estimate_tokens(20, 5) == 11192
    for nc in range(0, 30, 7):
        for nl in range(0, 8, 3):
            assert gs.estimate_tokens(nc, nl) == 462 + 19 * nc + 2070 * nl


def test_uniform_gallery():
    g1 = gs.generate_uniform_gallery(200, 3)
    g2 = gs.generate_uniform_gallery(200, 3)
    g3 = gs.generate_uniform_gallery(200, 4)
    assert len(g1) == 200
    assert all(-90.0 <= p.latitude <= 90.0 for p in g1)
    assert all(-180.0 < p.longitude <= 180.0 for p in g1)
    assert [(p.latitude, p.longitude) for p in g1] == [(p.latitude, p.longitude) for p in g2]
    assert [(p.latitude, p.longitude) for p in g1] != [(p.latitude, p.longitude) for p in g3]


def test_accuracy_at_thresholds():
    truths = [gs.GpsCoordinate(0.0, 0.0), gs.GpsCoordinate(10.0, 10.0)]
    preds = [gs.GpsCoordinate(0.0, 0.001), gs.GpsCoordinate(40.0, 90.0)]
    acc = gs.accuracy_at_thresholds(preds, truths)
    assert len(acc) == 5
    assert acc[0] == 0.5  # one street-level hit
    assert acc == sorted(acc)  # monotone in the threshold
    assert gs.accuracy_at_thresholds(preds, truths, [1e6]) == [1.0]


def small_encoder():
    cfg = gs.EncoderConfig()
    cfg.visual_dim = 10
    cfg.embed_dim = 6
    cfg.rff_features = 8
    cfg.sigmas = [1.0, 16.0]
    cfg.location_hidden = 16
    cfg.head_hidden = 32
    return cfg


def test_encoder_and_weight_files(tmp_path):
    cfg = small_encoder()
    model = gs.init_parameters(cfg, 11)
    assert model.embedding_dim == 6
    assert model.branch_count == 2

    paris = gs.GpsCoordinate(48.5, 2.5)
    e = gs.encode_location(model, paris)
    assert e.shape == (6,)
    assert np.linalg.norm(e) == pytest.approx(1.0, abs=1e-12)

    batch = gs.encode_locations_batch(model, [paris, gs.GpsCoordinate(-20.0, 57.5)])
    assert batch.shape == (2, 6)
    # The batched path sums in a different order than the single-point path,
    # so agreement is to rounding, not bitwise.
    assert np.allclose(batch[0], e, rtol=0.0, atol=1e-12)

    vis = np.linspace(-1.0, 1.0, 10)
    e_txt, e_loc = gs.project_image(model, vis)
    assert np.linalg.norm(e_txt) == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(e_loc) == pytest.approx(1.0, abs=1e-12)

    path = str(tmp_path / "w.gswt")
    gs.save_weights(model, path)
    again = gs.load_weights(path)
    assert np.array_equal(gs.encode_location(again, paris), e)

    with pytest.raises(RuntimeError):
        gs.load_weights(str(tmp_path / "missing.gswt"))


def synthetic_store(clusters=4, per_cluster=6, dim=10, seed=1234):
    rng = np.random.default_rng(seed)
    store = gs.FeatureStore()
    store.visual_dim = dim
    store.has_text_features = True
    entries = []
    for c in range(clusters):
        v_sig = rng.normal(size=dim)
        t_sig = rng.normal(size=dim)
        for s in range(per_cluster):
            e = gs.FeatureEntry()
            e.id = f"c{c}-s{s}"
            e.visual_feature = v_sig + 0.05 * rng.normal(size=dim)
            e.text_feature = t_sig + 0.05 * rng.normal(size=dim)
            e.gps = gs.GpsCoordinate(-60.0 + 35.0 * c, 10.0 + 40.0 * c)
            e.text = f"cluster {c} sample {s}"
            entries.append(e)
    store.entries = entries
    return store


def test_training_and_retrieval():
    store = synthetic_store()
    cfg = small_encoder()
    tc = gs.TrainConfig()
    tc.batch_size = 8
    tc.epochs = 2
    tc.learning_rate = 1e-3
    tc.seed = 5

    result = gs.train(store, cfg, tc)
    assert len(result.history) == 6  # 24 samples / batch 8, two epochs
    assert all(math.isfinite(rep.total) for _, rep in result.history)
    rerun = gs.train(store, cfg, tc)
    assert [rep.total for _, rep in rerun.history] == [rep.total for _, rep in result.history]

    db = gs.build_database(store.entries, result.model)
    assert len(db) == 24
    assert db.visual_dim == 10
    assert db.embed_dim == 6

    probe = store.entries[7]
    res = gs.query_neighbors(probe.visual_feature, db, 3)
    assert res.nearest[0].id == probe.id
    assert res.nearest[0].similarity == pytest.approx(1.0, abs=1e-5)
    assert [n.similarity for n in res.nearest] == sorted(
        (n.similarity for n in res.nearest), reverse=True
    )
    assert [n.similarity for n in res.farthest] == sorted(n.similarity for n in res.farthest)
    assert not {n.id for n in res.nearest} & {n.id for n in res.farthest}


def test_database_files(tmp_path):
    store = synthetic_store(seed=77)
    model = gs.init_parameters(small_encoder(), 21)
    db = gs.build_database(store.entries, model)
    path = str(tmp_path / "db.gsdb")
    gs.save_database(db, path)
    back = gs.load_database(path)
    assert back.ids() == db.ids()
    assert len(back) == len(db)


def identity_matches(count=60):
    m = gs.MatchInput()
    m.query_id = "q"
    m.image_w = 640
    m.image_h = 480
    m.matches = [
        gs.Correspondence(float((i * 37) % 613), float((i * 29) % 467),
                          float((i * 37) % 613), float((i * 29) % 467))
        for i in range(count)
    ]
    return m


def test_ransac_and_decision():
    report = gs.estimate_homography_ransac(identity_matches(), 4.0, 500, 7)
    assert report.match_count == 60
    assert report.inlier_ratio == 1.0
    assert np.allclose(report.homography, np.eye(3), atol=1e-6)
    assert all(report.inlier_mask)

    t = gs.GateThresholds()
    assert gs.layer1_verify(report, t)
    assert not gs.layer1_verify(None, t)

    p_search = gs.GpsCoordinate(1.0, 1.0)
    p_base = gs.GpsCoordinate(2.0, 2.0)

    d = gs.decide(report, -1.0, p_search, p_base, t)
    assert d.chosen == gs.Chosen.SEARCH and d.layer == gs.DecidingLayer.LAYER1
    assert (d.final_gps.latitude, d.final_gps.longitude) == (1.0, 1.0)

    d = gs.decide(None, 0.5, p_search, p_base, t)
    assert d.chosen == gs.Chosen.SEARCH and d.layer == gs.DecidingLayer.LAYER2

    d = gs.decide(None, 0.1, p_search, p_base, t)
    assert d.chosen == gs.Chosen.BASELINE and d.layer == gs.DecidingLayer.LAYER2
    assert (d.final_gps.latitude, d.final_gps.longitude) == (2.0, 2.0)


@needs_demo_bin
def test_fixture_pipeline_roundtrip(demo_suite, tmp_path):
    config = demo_suite["config"]

    first = gs.run_evaluate(config, str(tmp_path / "out1"))
    second = gs.run_evaluate(config, str(tmp_path / "out2"))
    assert first == second  # byte-identical reports across runs

    report = json.loads(first)
    assert len(report["queries"]) == demo_suite["queries"]
    assert len(report["accuracies"]) == 5
    assert all(0.0 <= a["accuracy"] <= 1.0 for a in report["accuracies"])
    assert report["tokens"]["total_estimated"] > 0
    assert (tmp_path / "out1" / "report.json").is_file()
    assert (tmp_path / "out1" / "accuracy.csv").is_file()

    trace = json.loads(gs.run_infer(config, report["queries"][0]["id"]))
    assert trace["query_id"] == report["queries"][0]["id"]
    assert "decision" in trace
    assert trace["tokens"]["prompt_estimated"] > 0

    with pytest.raises(ValueError):
        gs.run_infer(config, "no-such-query")


@needs_demo_bin
def test_gallery_eval_matches_store(demo_suite):
    with open(demo_suite["config"], encoding="utf-8") as f:
        config = json.load(f)
    queries = gs.load_queries(config["queries"], config.get("matches", ""))
    assert len(queries) == demo_suite["queries"]
    assert queries[0].truth is not None

    model = gs.load_weights(config["weights"])
    gallery = gs.generate_uniform_gallery(128, 9)
    res = gs.gallery_retrieval_eval(queries, gallery, model)
    assert len(res.predictions) == len(queries)
    assert len(res.accuracies) == len(res.thresholds_km) == 5
    assert all(0.0 <= a <= 1.0 for a in res.accuracies)
    gallery_set = {(p.latitude, p.longitude) for p in gallery}
    assert all((g.latitude, g.longitude) in gallery_set for _, g in res.predictions)
