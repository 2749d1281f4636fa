"""Smoke tests for the python bindings: numerics, rendering, events, and the
full generate -> train -> evaluate loop on a miniature dataset."""

import math

import numpy as np
import pytest

import fusionsplat as fsp


def test_covariance_identity_rotation():
    rot = np.array([1.0, 0.0, 0.0, 0.0])
    log_scale = np.log([0.5, 2.0, 3.0])
    cov = fsp.covariance_from_params(rot, log_scale)
    assert cov.shape == (3, 3)
    np.testing.assert_allclose(cov, np.diag([0.25, 4.0, 9.0]), rtol=1e-12)


def test_covariance_rotation_permutes_axes():
    # 90 degrees about z swaps the x and y principal axes.
    q = np.array([math.cos(math.pi / 4), 0.0, 0.0, math.sin(math.pi / 4)])
    cov = fsp.covariance_from_params(q, np.log([2.0, 1.0, 1.0]))
    np.testing.assert_allclose(cov, np.diag([1.0, 4.0, 1.0]), atol=1e-12)


def test_encode_time_values():
    enc = fsp.encode_time(0.25, 2)
    expected = []
    for k in range(3):
        arg = (2.0**k) * math.pi * 0.25
        expected += [math.sin(arg), math.cos(arg)]
    np.testing.assert_allclose(enc, expected, rtol=1e-15)
    with pytest.raises(fsp.ValidationError):
        fsp.encode_time(1.5, 2)


def test_psnr_and_drms():
    a = np.zeros((4, 4))
    b = np.full((4, 4), 0.1)
    db, exact = fsp.psnr(a, b)
    assert not exact
    assert db == pytest.approx(20.0, abs=1e-9)
    _, exact_same = fsp.psnr(a, a)
    assert exact_same

    validity = np.zeros((4, 4))
    validity[0, 0] = 1.0
    pred = np.zeros((4, 4))
    gt = np.zeros((4, 4))
    gt[0, 0] = 0.3
    gt[1, 1] = 99.0  # invalid pixel: excluded
    assert fsp.drms(pred, gt, validity) == pytest.approx(0.3, abs=1e-12)

    with pytest.raises(fsp.ValidationError):
        fsp.psnr(np.zeros((2, 2)), np.zeros((3, 3)))


def test_render_single_gaussian():
    w2c = fsp.look_at(
        np.array([0.0, 0.0, -2.0]), np.zeros(3), np.array([0.0, 1.0, 0.0])
    )
    cam = fsp.Camera(
        fx=24.0, fy=24.0, cx=8.0, cy=8.0, width=16, height=16, world_to_camera=w2c
    )
    out = fsp.render(
        mu=np.zeros((1, 3)),
        rot=np.array([[1.0, 0.0, 0.0, 0.0]]),
        log_scale=np.full((1, 3), math.log(0.15)),
        opacity_logit=np.array([4.0]),
        color_logit=np.array([[3.0, -3.0, -3.0]]),
        camera=cam,
        background=np.zeros(3),
        threads=2,
    )
    color, depth, alpha = out["color"], out["depth"], out["alpha"]
    assert color.shape == (16, 16, 3)
    assert depth.shape == (16, 16)
    # Center pixel: strongly red, nearly opaque, at the gaussian's distance.
    assert color[8, 8, 0] > 0.8 and color[8, 8, 1] < 0.1
    assert alpha[8, 8] > 0.9
    assert depth[8, 8] == pytest.approx(2.0, rel=0.05)
    # Far corner: background.
    assert alpha[0, 0] < 1e-6


def test_simulate_and_accumulate_round_trip():
    # A 1x2 monotone log-luminance ramp: one pixel static, one rising by 1.1
    # (clear of the 4th threshold rung, so rounding cannot drop an event).
    n, h, w = 9, 1, 2
    frames = np.zeros((n, h, w))
    ts = np.linspace(0.0, 1.0, n)
    eps = 1e-3
    for k in range(n):
        frames[k, 0, 0] = 0.2
        frames[k, 0, 1] = math.exp(1.1 * ts[k]) - eps  # log(v + eps) == 1.1 t
    events = fsp.simulate_events(frames, list(ts), contrast=0.25)
    assert events["width"] == w and events["height"] == h
    assert len(events["t"]) == 4  # 1.1 of log change at threshold 0.25
    assert np.all(events["polarity"] == 1)
    assert np.all(events["x"] == 1)

    win = fsp.accumulate_window(events, 0.0, 1.0, eta=0.25)
    assert win["delta_log"][0, 1] == pytest.approx(1.0, abs=1e-12)
    assert win["delta_log"][0, 0] == 0.0
    assert win["mask"][0, 0] == 1.0 and win["mask"][0, 1] == 1.0


def test_event_loss_masking():
    window = {
        "delta_log": np.array([[0.5, 0.0]]),
        "mask": np.array([[1.0, 0.0]]),
    }
    predicted = np.array([[0.3, 99.0]])
    loss, all_masked = fsp.event_loss(window, predicted)
    assert not all_masked
    assert loss == pytest.approx(0.04, abs=1e-12)

    window["mask"] = np.zeros((1, 2))
    loss, all_masked = fsp.event_loss(window, predicted)
    assert all_masked and loss == 0.0


def test_predicted_log_diff_antisymmetry():
    rng = np.random.default_rng(7)
    a = rng.uniform(0.05, 0.95, size=(5, 4, 3))
    b = rng.uniform(0.05, 0.95, size=(5, 4, 3))
    d_ab = fsp.predicted_log_diff(a, b)
    d_ba = fsp.predicted_log_diff(b, a)
    np.testing.assert_allclose(d_ab, -d_ba, atol=1e-14)


def test_generate_train_evaluate_loop(tmp_path):
    data_dir = str(tmp_path / "data")
    info = fsp.generate_scene(
        "orbiting_two_ball",
        data_dir,
        resolution=16,
        views=2,
        timestamps=3,
        seed=4,
    )
    assert info["rgb_frames"] > 0
    assert info["events"] > 0
    assert info["scene_diameter"] > 1.0

    cfg = tmp_path / "train.cfg"
    cfg.write_text(
        "total_steps 12\n"
        "static_steps 4\n"
        "init_points 100\n"
        "grid_res_spatial 8\n"
        "grid_res_time 4\n"
        "grid_features 4\n"
        "decoder_hidden 16\n"
        "decoder_layers 2\n"
        "decoder_k_max 2\n"
    )
    ckpt = fsp.run_training(
        data_dir, str(tmp_path / "run"), config_path=str(cfg), seed=9, threads=2
    )
    report = fsp.evaluate_checkpoint(ckpt, data_dir, split="eval")
    assert not report["empty_split"]
    assert report["frames"] > 0
    assert math.isfinite(report["mean_psnr_db"])
    assert report["mean_drms"] >= 0.0

    with pytest.raises(fsp.ValidationError):
        fsp.generate_scene("no_such_scene", str(tmp_path / "bad"))
