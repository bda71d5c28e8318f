import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import facing_scenario
from silbench.errors import ValidationError
from silbench.scene import EnvConditions, MarkerSpec, SensorSpecs
from silbench.se3 import IDENTITY, Pose, compose, geodesic_distance, invert, quat_from_axis_angle
from silbench.sensors import (
    PANEL_COLOR,
    Image,
    NavReading,
    apply_attenuation,
    apply_pixel_noise,
    marker_in_camera,
    observe_markers,
    read_depth,
    read_pnm,
    render_view,
    simulate_nav,
    write_depth,
    write_pgm,
    write_ppm,
)

FLIP_X = quat_from_axis_angle([1, 0, 0], math.pi)


def centered_marker_scenario(distance=2.0, env=EnvConditions()):
    s = facing_scenario(distance, env)
    return replace(s, markers=(MarkerSpec(3, Pose.identity(), 0.15),))


def straight_line(speed=1.0, **sensor_kw):
    s = facing_scenario()
    return replace(
        s,
        trajectory_poses=(Pose([0, 0, 1], [1, 0, 0, 0]), Pose([10 * speed, 0, 1], [1, 0, 0, 0])),
        sensors=SensorSpecs(**sensor_kw),
    )


def test_noise_free_marker_is_exact(rng):
    s = centered_marker_scenario()
    obs = observe_markers(s, IDENTITY, 0.0, 0, s.env, rng)
    assert len(obs) == 1
    truth = marker_in_camera(s, IDENTITY, 0, 3)
    assert np.array_equal(obs[0].pose_in_camera.position, truth.position)
    assert np.allclose(truth.position, [0, 0, 2])
    residual = compose(invert(truth), obs[0].pose_in_camera)
    assert np.linalg.norm(residual.position) < 1e-9
    assert geodesic_distance(residual.orientation, IDENTITY.orientation) < 1e-9


def test_marker_behind_camera_excluded(rng):
    s = centered_marker_scenario(-2.0)
    assert observe_markers(s, IDENTITY, 0.0, 0, s.env, rng) == []


def test_marker_out_of_range_or_too_oblique(rng):
    s = centered_marker_scenario(9.0)
    assert observe_markers(s, IDENTITY, 0.0, 0, s.env, rng) == []
    s = centered_marker_scenario(2.0)
    tilted = replace(s, panel_pose_gt=compose(s.panel_pose_gt, Pose([0, 0, 0], quat_from_axis_angle([0, 1, 0], math.radians(60)))))
    assert len(observe_markers(tilted, IDENTITY, 0.0, 0, s.env, rng)) == 1
    oblique = replace(s, panel_pose_gt=compose(s.panel_pose_gt, Pose([0, 0, 0], quat_from_axis_angle([0, 1, 0], math.radians(70)))))
    assert observe_markers(oblique, IDENTITY, 0.0, 0, s.env, rng) == []


def test_marker_translation_noise_monte_carlo():
    s = centered_marker_scenario(env=EnvConditions(marker_sigma_t=0.05))
    rng = np.random.default_rng(5)
    truth = marker_in_camera(s, IDENTITY, 0, 3).position
    err = np.array([observe_markers(s, IDENTITY, 0.0, 0, s.env, rng)[0].pose_in_camera.position - truth
                    for _ in range(10_000)])
    assert np.all(np.abs(err.std(axis=0) / 0.05 - 1) < 0.1)


def test_marker_noise_grows_with_range():
    rng = np.random.default_rng(0)
    env = EnvConditions(marker_sigma_t=0.02, marker_noise_growth=0.5)
    spreads = []
    for d in (1.5, 4.0):
        s = centered_marker_scenario(d, env)
        truth = marker_in_camera(s, IDENTITY, 0, 3).position
        err = [observe_markers(s, IDENTITY, 0.0, 0, env, rng)[0].pose_in_camera.position - truth for _ in range(2000)]
        spreads.append(np.std(err))
    assert abs(spreads[0] / 0.02 - 1.75) < 0.15 and abs(spreads[1] / 0.02 - 3.0) < 0.25


def test_dropout_and_blackout(rng):
    s = centered_marker_scenario()
    always = EnvConditions(detection_dropout={"base": 1.0})
    assert observe_markers(s, IDENTITY, 0.0, 0, always, rng) == []
    dark = EnvConditions(blackouts=((1.0, 2.0),))
    assert observe_markers(s, IDENTITY, 1.5, 0, dark, rng) == []
    assert len(observe_markers(s, IDENTITY, 2.0, 0, dark, rng)) == 1


def test_marker_observations_reproducible():
    s = centered_marker_scenario(env=EnvConditions(marker_sigma_t=0.05, marker_sigma_r=0.05))
    a = observe_markers(s, IDENTITY, 0.0, 0, s.env, np.random.default_rng(3))
    b = observe_markers(s, IDENTITY, 0.0, 0, s.env, np.random.default_rng(3))
    assert a[0].pose_in_camera.to_list() == b[0].pose_in_camera.to_list()


def test_nav_stationary(rng):
    s = replace(facing_scenario(), trajectory_poses=(Pose([0, 0, 1.5], [1, 0, 0, 0]),) * 2)
    for t in (0.5, 3.0, 9.0):
        ins, dvl = simulate_nav(s, t, 0.2, rng)
        assert ins.kind == "ins" and dvl.kind == "dvl"
        assert np.allclose(ins.linear_acceleration, 0, atol=1e-12) and np.all(ins.angular_velocity == 0)
        assert np.allclose(dvl.linear_velocity, 0, atol=1e-12) and abs(dvl.altitude - 1.5) < 1e-12


def test_nav_constant_velocity_line(rng):
    s = straight_line(0.7)
    for t in (1.0, 4.2, 8.8):
        ins, dvl = simulate_nav(s, t, 0.02, rng)
        assert np.allclose(dvl.linear_velocity, [0.7, 0, 0], atol=1e-6)
        assert np.allclose(ins.linear_acceleration, 0, atol=1e-6)


def test_nav_velocity_is_body_frame(rng):
    yaw90 = quat_from_axis_angle([0, 0, 1], math.pi / 2)
    s = replace(facing_scenario(), trajectory_poses=(Pose([0, 0, 1], yaw90), Pose([0, 5, 1], yaw90)))
    _, dvl = simulate_nav(s, 5.0, 0.1, rng)
    assert np.allclose(dvl.linear_velocity, [0.5, 0, 0], atol=1e-9)


def test_nav_dvl_bias_monte_carlo():
    s = straight_line(1.0, dvl_velocity_bias=(0.02, 0, 0), dvl_velocity_sigma=0.05)
    rng = np.random.default_rng(11)
    ts = np.linspace(0.1, 10.0, 10_000)
    err = np.array([simulate_nav(s, t, 0.01, rng, kinds=("dvl",))[0].linear_velocity[0] - 1.0 for t in ts])
    assert abs(err.mean() - 0.02) < 0.002


def test_nav_window_out_of_range(rng):
    s = straight_line()
    with pytest.raises(ValidationError):
        simulate_nav(s, 0.05, 0.1, rng)
    with pytest.raises(ValidationError):
        simulate_nav(s, 10.5, 0.1, rng)


def test_nav_reading_fields_exclusive():
    with pytest.raises(ValidationError):
        NavReading(0.0, "ins", linear_acceleration=[0, 0, 0])
    with pytest.raises(ValidationError):
        NavReading(0.0, "dvl", linear_velocity=[0, 0, 0], altitude=1.0, angular_velocity=[0, 0, 0])


def front_camera(s, standoff):
    """Camera ``standoff`` metres in front of the panel centre, looking at it."""
    return compose(s.panel_pose_gt, Pose([0, 0, standoff], FLIP_X))


def test_render_looking_away_is_uniform_background():
    s = facing_scenario(2.0, EnvConditions(background=(10, 20, 30)))
    img = render_view(s, Pose([0, 0, 5.0], [1, 0, 0, 0]))
    assert np.all(img.pixels == np.array([10, 20, 30], dtype=np.uint8))
    assert np.all(np.isinf(img.depth))


def test_render_panel_fills_frame(panel):
    img = render_view(panel, front_camera(panel, 1.5))
    k = panel.intrinsics
    frac = np.mean(np.all(img.pixels == np.array(PANEL_COLOR, dtype=np.uint8), axis=-1))
    # projected panel area minus the marker and lever patches drawn on it
    w, h = panel.panel_size
    drawn = sum(m.side_length**2 for m in panel.markers) + sum(c.lever_length * c.lever_width for c in panel.components)
    scale = (k.fx / 1.5) * (k.fy / 1.5) / (k.width * k.height)
    assert frac > 0.5
    assert abs(frac - (w * h - drawn) * scale) < 0.02


def test_render_depth_at_panel_center(panel):
    k = panel.intrinsics
    img = render_view(panel, front_camera(panel, 1.5))
    # a blank patch of panel near the centre (the centre itself carries a marker)
    v, u = int(k.cy), int(k.cx + 0.30 * k.fx / 1.5)
    assert abs(img.depth[v, u] - 1.5) < 0.01
    assert abs(img.depth[int(k.cy), int(k.cx)] - 1.5) < 0.01


def test_render_window_matches_full_frame(panel):
    from silbench.scene import PixelRect

    cam = front_camera(panel, 2.0)
    full = render_view(panel, cam)
    win = render_view(panel, cam, window=PixelRect(100, 50, 299, 179))
    assert win.origin == (100, 50) and win.pixels.shape == (130, 200, 3)
    assert np.array_equal(win.pixels, full.pixels[50:180, 100:300])


def test_render_without_depth(panel):
    assert render_view(panel, front_camera(panel, 2.0), include_depth=False).depth is None


def test_attenuation_examples():
    px = np.full((2, 2, 3), 200, dtype=np.uint8)
    env = EnvConditions(attenuation=(0.05, 0.05, 0.05), background=(30, 30, 30))
    assert np.array_equal(apply_attenuation(Image(px, np.zeros((2, 2))), env).pixels, px)
    assert np.all(apply_attenuation(Image(px, np.full((2, 2), np.inf)), env).pixels == 30)
    out = apply_attenuation(Image(px, np.full((2, 2), 10.0)), env)
    expected = 200 * math.exp(-0.5) + (1 - math.exp(-0.5)) * 30
    assert abs(expected - 133.1) < 0.05
    assert np.all(out.pixels == 133)


def test_attenuation_needs_depth():
    with pytest.raises(ValidationError):
        apply_attenuation(Image(np.zeros((2, 2, 3), dtype=np.uint8)), EnvConditions())


def test_pixel_noise():
    img = Image(np.full((100, 1000, 3), 128, dtype=np.uint8))
    assert np.array_equal(apply_pixel_noise(img, 0.0, np.random.default_rng(0)).pixels, img.pixels)
    a = apply_pixel_noise(img, 10.0, np.random.default_rng(4))
    b = apply_pixel_noise(img, 10.0, np.random.default_rng(4))
    assert np.array_equal(a.pixels, b.pixels)
    assert abs(a.pixels.astype(float).std() / 10.0 - 1) < 0.1
    with pytest.raises(ValidationError):
        apply_pixel_noise(img, -1.0, np.random.default_rng(0))


def test_image_files_round_trip(tmp_path, rng):
    px = rng.integers(0, 256, size=(7, 5, 3), dtype=np.uint8)
    write_ppm(tmp_path / "a.ppm", Image(px))
    assert np.array_equal(read_pnm(tmp_path / "a.ppm").pixels, px)
    write_pgm(tmp_path / "a.pgm", Image(px[..., 0]))
    assert np.array_equal(read_pnm(tmp_path / "a.pgm").pixels, px[..., 0])
    depth = rng.uniform(0.5, 9.0, size=(7, 5)).astype(np.float32).astype(float)
    write_depth(tmp_path / "d.bin", depth)
    assert (tmp_path / "d.bin").stat().st_size == 16 + 4 * 35
    assert np.array_equal(read_depth(tmp_path / "d.bin"), depth)


pixel = st.integers(0, 255)
coef = st.floats(0.0, 2.0)


@given(pixel, pixel, coef, coef, st.floats(0.0, 50.0), st.floats(0.0, 50.0))
@settings(max_examples=200, deadline=None)
def test_property_attenuation_monotone_and_convex(i, b, a0, a1, z0, z1):
    lo_a, hi_a = sorted((a0, a1))
    lo_z, hi_z = sorted((z0, z1))

    def att(a, z):
        img = Image(np.full((1, 1, 3), i, dtype=np.uint8), np.full((1, 1), z))
        return int(apply_attenuation(img, EnvConditions(attenuation=(a, a, a), background=(b, b, b))).pixels[0, 0, 0])

    v = att(lo_a, lo_z)
    assert min(i, b) <= v <= max(i, b)
    if i >= b:
        assert att(hi_a, lo_z) <= v and att(lo_a, hi_z) <= v
