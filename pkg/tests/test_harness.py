import json
import math
from dataclasses import replace

import numpy as np
import pytest

from silbench.errors import SilError, UnknownMarkerError, ValidationError
from silbench.harness import (
    NO_DETECTION,
    POS_ERR,
    ROT_ERR,
    RecordedSample,
    TaskConfig,
    TaskResult,
    generate_pseudo_real,
    generate_stream,
    load_results,
    read_stream,
    run_ladder,
    run_sil_loop,
    run_task_th,
    run_task_tp,
    save_results,
    write_report,
    write_stream,
)
from silbench.scene import EnvConditions, load_env
from silbench.sensors import MarkerObservation

E0 = EnvConditions(name="E0")


def test_pair_count_and_order(panel):
    stream = generate_stream(panel, E0, 0, duration=5.0, nav=False)
    pairs, rows = run_sil_loop(panel, stream, TaskConfig("TP", env=E0))
    assert len(pairs) == len(stream) == 50
    assert [p.t for p in pairs] == sorted(p.t for p in pairs)
    assert [t for t, _, _ in rows] == sorted(t for t, _, _ in rows)
    for p in pairs:
        assert p.sim.robot_pose is not None or not p.detected


def test_noise_free_tp_is_exact(panel):
    stream = generate_stream(panel, E0, 0, duration=10.0, nav=False)
    _, rows = run_sil_loop(panel, stream, TaskConfig("TP", env=E0))
    errs = [v for _, n, v in rows if n in (POS_ERR, ROT_ERR)]
    assert errs and max(errs) < 1e-9


def test_no_detection_samples_are_kept(panel):
    stream = generate_stream(panel, E0, 0, duration=3.0, nav=False)
    stream[5] = replace(stream[5], observations=())
    pairs, rows = run_sil_loop(panel, stream, TaskConfig("TP", env=E0))
    assert len(pairs) == len(stream)
    gap = pairs[5]
    assert not gap.detected and gap.sim.observations == () and gap.sim.robot_pose is None
    assert gap.measures == {NO_DETECTION: 1.0}
    assert (gap.t, NO_DETECTION, 1.0) in rows


def test_unknown_marker_reports_time(panel):
    stream = generate_stream(panel, E0, 0, duration=2.0, nav=False)
    o = stream[3].observations[0]
    stream[3] = replace(stream[3], observations=(MarkerObservation(42, o.pose_in_camera, o.t, 0),))
    with pytest.raises(UnknownMarkerError, match=f"unknown marker id 42 at t={stream[3].t}"):
        run_sil_loop(panel, stream, TaskConfig("TP"))


def test_empty_stream_rejected(panel):
    with pytest.raises(ValidationError, match="empty"):
        run_sil_loop(panel, [], TaskConfig("TP"))


def test_task_config_validation():
    from silbench.ekf import EkfConfig

    assert TaskConfig("tl3").task == "TL3"
    with pytest.raises(ValidationError, match="unknown task"):
        TaskConfig("TX")
    with pytest.raises(ValidationError, match="gate"):
        TaskConfig("TL5", ekf=EkfConfig(landmark_gate=None))
    with pytest.raises(ValidationError):
        TaskConfig("TL2", ekf=EkfConfig(use_landmarks=True))
    with pytest.raises(ValidationError):
        TaskConfig("TP", panel_source="guess")


def test_rates_over_sixty_seconds(panel):
    stream = generate_stream(panel, E0, 0, duration=60.0)
    nav = [r for s in stream for r in s.nav]
    assert len(stream) == 600
    assert sum(r.kind == "ins" for r in nav) == 3000
    assert sum(r.kind == "dvl" for r in nav) == 300
    for s in stream:
        assert all(r.t <= s.t + 1e-9 for r in s.nav)


def test_same_seed_gives_identical_files(panel, tmp_path):
    estar = load_env("estar")
    a = generate_pseudo_real(panel, estar, 5, tmp_path / "a" / "s.ndjson", 3.0, "roi", image_every=10)
    b = generate_pseudo_real(panel, estar, 5, tmp_path / "b" / "s.ndjson", 3.0, "roi", image_every=10)
    c = generate_pseudo_real(panel, estar, 6, tmp_path / "c" / "s.ndjson", 3.0, "roi", image_every=10)
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()
    imgs_a = sorted((tmp_path / "a" / "s_img").iterdir())
    imgs_b = sorted((tmp_path / "b" / "s_img").iterdir())
    assert len(imgs_a) == 6
    assert [p.read_bytes() for p in imgs_a] == [p.read_bytes() for p in imgs_b]


def test_stream_round_trip(panel, tmp_path):
    stream = generate_stream(panel, load_env("estar"), 1, duration=2.0, images="roi", image_every=5)
    path = write_stream(stream, tmp_path / "s.ndjson", {"note": "x"})
    header, back = read_stream(path)
    assert header["schema"] == "sil-stream/1" and header["note"] == "x"
    assert len(back) == len(stream)
    for r, b in zip(stream, back):
        assert b.t == r.t and b.source == "file"
        assert [o.marker_id for o in b.observations] == [o.marker_id for o in r.observations]
        assert [n.kind for n in b.nav] == [n.kind for n in r.nav]
        assert np.array_equal(b.pose.position, r.pose.position)
        for v in r.images:
            assert np.array_equal(b.image(v).pixels, r.images[v].pixels)
            assert b.image(v).origin == r.images[v].origin


def test_read_stream_errors(tmp_path):
    p = tmp_path / "bad.ndjson"
    p.write_text('{"schema": "sil-stream/1"}\n{"t": 1.0}\n{"t": 2.0,\n')
    with pytest.raises(ValidationError, match="line 3"):
        read_stream(p)
    p.write_text('{"schema": "other"}\n')
    with pytest.raises(ValidationError, match="schema"):
        read_stream(p)
    p.write_text('{"schema": "sil-stream/1"}\n{"t": 2.0}\n{"t": 1.0}\n')
    with pytest.raises(ValidationError, match="line 3.*backwards"):
        read_stream(p)
    p.write_text('{"schema": "sil-stream/1"}\n{"markers": []}\n')
    with pytest.raises(ValidationError, match="line 2"):
        read_stream(p)
    with pytest.raises(ValidationError):
        read_stream(tmp_path / "missing.ndjson")


def test_tp_fails_without_detections(panel):
    stream = [replace(r, observations=()) for r in generate_stream(panel, E0, 0, duration=1.0, nav=False)]
    with pytest.raises(SilError, match="no frame"):
        run_task_tp(panel, E0, stream=stream)


def test_tp_error_grows_with_noise(panel):
    estar = load_env("estar")
    means = []
    for f in (0.0, 0.5, 1.0):
        env = replace(estar, marker_sigma_t=f * estar.marker_sigma_t, marker_sigma_r=f * estar.marker_sigma_r,
                      outlier_rate=f * estar.outlier_rate)
        stats, _ = run_task_tp(panel, env, trials=2, seed=11, duration=10.0)
        means.append((stats.mean_translation, stats.mean_rotation))
    assert means[0][0] < 1e-9
    assert all(b[0] >= a[0] and b[1] >= a[1] for a, b in zip(means, means[1:]))


def test_tp_summary_slots(panel):
    stats, res = run_task_tp(panel, load_env("estar"), seed=3, duration=5.0)
    assert res.summary["single_detection_var_m2"] == pytest.approx(stats.rms_translation**2)
    assert np.allclose(np.diag(stats.single_detection_cov)[:3], stats.rms_translation**2)
    assert stats.n_trials == 1 and stats.n_frames > 0


def test_th_noise_free_pipeline(panel_e0):
    res = run_task_th(panel_e0, seed=0, duration=2.0, image_every=5, sim_images=False)
    raw = [v for _, n, v in res.rows if n.startswith("raw_error_deg/")]
    assert raw and max(abs(v) for v in raw) < 2.0
    assert not any("/B1/" in n or "/B2/" in n for _, n, _ in res.rows)
    assert {k.split("/")[0] for k in res.summary} <= {"A1", "B4", "C3"}


def test_report_empty_measures_is_header_only(tmp_path):
    write_report([TaskResult("TP", [], {})], tmp_path, "csv")
    assert (tmp_path / "measures.csv").read_text() == "task,t,measure,value\n"
    assert (tmp_path / "summary.csv").read_text() == "task,measure,value\n"
    assert not (tmp_path / "ladder.csv").exists()


def test_report_byte_identical_and_json(panel, tmp_path):
    outs = []
    for k in range(2):
        _, res = run_task_tp(panel, load_env("estar"), seed=9, duration=3.0)
        d = tmp_path / str(k)
        write_report([res], d, "csv")
        write_report([res], d, "json")
        outs.append([(d / n).read_bytes() for n in ("measures.csv", "summary.csv", "report.json")])
    assert outs[0] == outs[1]
    doc = json.loads((tmp_path / "0" / "report.json").read_text())
    assert doc["tasks"][0]["task"] == "TP"
    with pytest.raises(ValidationError):
        write_report([], tmp_path, "xml")


def test_ladder_table_shape_and_results_round_trip(degraded, tmp_path):
    ladder = run_ladder(degraded, duration=8.0, seed=2)
    assert list(ladder) == ["TL2", "TL3", "TL4", "TL5"]
    results = [r.result for r in ladder.values()]
    write_report(results, tmp_path, "csv")
    table = [ln.split(",") for ln in (tmp_path / "ladder.csv").read_text().splitlines()]
    assert table[0] == ["measure", "TL2", "TL2_std", "TL3", "TL3_std", "TL4", "TL4_std", "TL5", "TL5_std"]
    assert [r[0] for r in table[1:]] == ["position_error_m", "orientation_error_deg", "m_A"]
    assert all(len(r) == 9 for r in table)
    p = save_results(results, tmp_path / "results.json")
    back = load_results(p)
    assert [r.task for r in back] == [r.task for r in results]
    for a, b in zip(back, results):
        assert len(a.rows) == len(b.rows)
        assert all(math.isclose(x[2], y[2], rel_tol=1e-11) for x, y in zip(a.rows, b.rows))


def test_file_source_samples(panel):
    r = RecordedSample(0.1, (), (), {}, None, "file")
    assert r.source == "file" and r.image(0) is None
    with pytest.raises(ValidationError):
        RecordedSample(0.1, source="tape")
