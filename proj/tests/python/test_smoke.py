import os
import pathlib

import numpy as np
import pytest

import comapgs

SOURCE_DIR = pathlib.Path(os.environ.get("COMAP_SOURCE_DIR", pathlib.Path(__file__).parents[2]))
MONO_WALL = SOURCE_DIR / "data" / "scenes" / "mono_wall.json"


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    scene, out = root / "scene", root / "out"
    reports = {
        "synth": comapgs.run("synth", spec=MONO_WALL, out=scene),
        "comap": comapgs.run("comap", scene=scene, out=out),
        "enhance": comapgs.run("enhance", scene=scene, out=out),
        "train": comapgs.run("train-proximity", out=out, iterations=50, seed=3),
    }
    return scene, out, reports


def test_weight_out():
    assert comapgs.weight_out(0.5) == 0.0
    assert comapgs.weight_out(0.7) == 0.0
    assert comapgs.weight_out(0.85) == pytest.approx(0.5, abs=1e-15)


def test_refine_removes_isolated_pixel():
    counts = np.zeros((9, 9), dtype=np.uint16)
    counts[4, 4] = 2
    counts[0:4, 0:4] = 1
    refined = comapgs.refine_covis_map(counts, kernel_radius=1, n_views=3)
    assert refined[4, 4] == 0
    assert (refined[0:4, 0:4] == 1).all()
    assert refined.dtype == np.uint16


def test_scene_score_is_mean_of_view_means():
    a = np.full((2, 2), 2, dtype=np.uint16)
    b = np.zeros((2, 2), dtype=np.uint16)
    s, per_view = comapgs.scene_covis_score([a, b], n_views=3)
    assert per_view == [1.0, 0.0]
    assert s == 0.5


def test_covis_maps_match_stage_report(pipeline):
    scene, _, reports = pipeline
    raw, refined, s = comapgs.covis_maps(scene)
    assert s == reports["comap"]["S"]
    assert sorted(raw) == sorted(refined)
    for view_id, counts in raw.items():
        assert counts.shape == refined[view_id].shape
        assert counts.max() <= len(raw) - 1


def test_enhance_outputs_readable(pipeline):
    _, out, reports = pipeline
    cloud = comapgs.read_ply(out / "enhance" / "p_final.ply")
    assert cloud["positions"].shape == (reports["enhance"]["counts"]["P_final"], 3)
    assert np.isfinite(cloud["positions"]).all()
    mono = int((cloud["sources"] == comapgs.SOURCE_NAMES.index("mono")).sum())
    assert mono == reports["enhance"]["P_final_sources"]["mono"]


def test_model_scores_and_gradients(pipeline):
    _, out, _ = pipeline
    model = comapgs.ProximityModel.load(out / "proximity" / "model.cmpx")
    pts = np.array([[0.0, 0.0, 3.0], [-1.4, 0.0, 2.0], [5.0, 5.0, 5.0]])
    scores, grads = model.score_with_gradient(pts)
    assert scores.shape == (3,) and grads.shape == (3, 3)
    assert ((scores > 0) & (scores < 1)).all()
    np.testing.assert_array_equal(scores, model.score(pts))
    h = 1e-6 * model.scale
    e = np.array([h, 0.0, 0.0])
    fd = (model.score(pts + e) - model.score(pts - e)) / (2 * h)
    np.testing.assert_allclose(grads[:, 0], fd, rtol=1e-4, atol=1e-8)


def test_errors_carry_kind_and_exit_code(tmp_path):
    with pytest.raises(comapgs.ComapError) as info:
        comapgs.run("comap", scene=tmp_path / "missing", out=tmp_path / "out")
    assert info.value.exit_code == 4
    with pytest.raises(comapgs.ComapError) as info:
        comapgs.run("enhance", scene=tmp_path, gate_px=-1.0)
    assert info.value.kind == "InvalidArgument"
    assert info.value.exit_code == 2
