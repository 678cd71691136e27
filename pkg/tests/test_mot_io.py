import numpy as np
import pytest

from motkit.geometry import BBox
from motkit.mot_io import (DetectionRow, OcclusionEvent, ParseError, SyntheticSpec,
                           gen_synthetic_sequence, load_synthetic_spec, parse_det_file,
                           parse_seqinfo, read_ppm, write_ppm, write_results,
                           write_sequence)


# -- det/gt parsing ------------------------------------------------------------

def test_parse_standard_detection_line(tmp_path):
    p = tmp_path / "det.txt"
    p.write_text("1,-1,10.5,20,30,40,0.9,-1,-1,-1\n")
    rows = parse_det_file(p)
    assert len(rows) == 1
    r = rows[0]
    assert r.frame == 1 and r.id == -1 and r.conf == 0.9
    # 1-based file coordinates become 0-based internally
    assert (r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h) == (9.5, 19.0, 30.0, 40.0)
    assert r.extra == ("-1", "-1", "-1")


def test_parse_empty_file(tmp_path):
    p = tmp_path / "det.txt"
    p.write_text("")
    assert parse_det_file(p) == []


def test_parse_rejects_zero_width_with_line_number(tmp_path):
    p = tmp_path / "det.txt"
    p.write_text("1,-1,5,5,10,10,1\n2,-1,5,5,0,10,1\n")
    with pytest.raises(ParseError, match=":2"):
        parse_det_file(p)


def test_parse_rejects_non_numeric_with_line_number(tmp_path):
    p = tmp_path / "det.txt"
    p.write_text("1,-1,five,5,10,10,1\n")
    with pytest.raises(ParseError, match=":1"):
        parse_det_file(p)


# -- result writing -------------------------------------------------------------

def test_write_single_row_format(tmp_path):
    p = tmp_path / "res.txt"
    write_results([DetectionRow(3, 7, BBox(9.5, 19.0, 30.0, 40.0), 1.0)], p)
    assert p.read_text() == "3,7,10.50,20.00,30.00,40.00,1.00,-1,-1,-1\n"


def test_write_parse_roundtrip(tmp_path):
    rows = [DetectionRow(1, 1, BBox(10.25, 20.75, 30.5, 40.0), 1.0),
            DetectionRow(2, 1, BBox(11.0, 21.0, 30.5, 40.0), 0.5),
            DetectionRow(2, 2, BBox(50.0, 60.0, 10.0, 12.25), 1.0)]
    p = tmp_path / "res.txt"
    write_results(rows, p)
    back = parse_det_file(p)
    assert len(back) == len(rows)
    for a, b in zip(rows, back):
        assert (a.frame, a.id) == (b.frame, b.id)
        assert (a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h) == \
               (b.bbox.x, b.bbox.y, b.bbox.w, b.bbox.h)
        assert a.conf == b.conf


def test_write_rounds_half_up(tmp_path):
    p = tmp_path / "res.txt"
    write_results([DetectionRow(1, 1, BBox(9.255, 0.0, 10.0, 10.0), 1.0)], p)
    # 9.255 + 1 (file convention) = 10.255 -> "10.26"
    assert p.read_text().split(",")[2] == "10.26"


def test_write_rejects_bad_ids_and_orders(tmp_path):
    p = tmp_path / "res.txt"
    with pytest.raises(ValueError):
        write_results([DetectionRow(1, 0, BBox(0, 0, 5, 5), 1.0)], p)
    rows = [DetectionRow(2, 1, BBox(0, 0, 5, 5), 1.0),
            DetectionRow(1, 1, BBox(0, 0, 5, 5), 1.0)]
    with pytest.raises(ValueError):
        write_results(rows, p)


# -- seqinfo ----------------------------------------------------------------------

def test_parse_seqinfo_minimal(tmp_path):
    p = tmp_path / "seqinfo.ini"
    p.write_text("[Sequence]\nimWidth=640\nimHeight=480\nseqLength=100\nframeRate=30\n")
    meta = parse_seqinfo(p)
    assert (meta.width, meta.height, meta.length, meta.frame_rate) == (640, 480, 100, 30.0)


def test_parse_seqinfo_missing_key_named(tmp_path):
    p = tmp_path / "seqinfo.ini"
    p.write_text("[Sequence]\nimWidth=640\nimHeight=480\nframeRate=30\n")
    with pytest.raises(ParseError, match="seqLength"):
        parse_seqinfo(p)


def test_parse_seqinfo_ignores_unknown_keys(tmp_path):
    p = tmp_path / "seqinfo.ini"
    p.write_text("[Sequence]\nname=x\nimDir=img1\nimExt=.ppm\nimWidth=64\n"
                 "imHeight=48\nseqLength=10\nframeRate=25\nwhatever=yes\n")
    assert parse_seqinfo(p).name == "x"


# -- ppm --------------------------------------------------------------------------

def test_ppm_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, size=(12, 16, 3))
    p = tmp_path / "f.ppm"
    write_ppm(p, img)
    back = read_ppm(p)
    assert back.shape == (12, 16, 3)
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-9


# -- synthetic generation ------------------------------------------------------------

def test_noiseless_detections_equal_ground_truth():
    seq = gen_synthetic_sequence(SyntheticSpec(num_identities=1, frames=20, seed=4))
    assert len(seq.det) == len(seq.gt)
    for g, d in zip(seq.gt, seq.det):
        assert d.frame == g.frame and d.conf == 1.0
        assert (d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h) == \
               (g.bbox.x, g.bbox.y, g.bbox.w, g.bbox.h)


def test_occlusion_window_has_no_rows():
    spec = SyntheticSpec(num_identities=2, frames=30, seed=5,
                         occlusions=(OcclusionEvent(target=0, start=10, duration=5),))
    seq = gen_synthetic_sequence(spec)
    hidden = [r for r in seq.gt if r.id == 1 and 10 <= r.frame < 15]
    assert hidden == []
    visible_other = [r for r in seq.gt if r.id == 2 and 10 <= r.frame < 15]
    assert len(visible_other) == 5


def test_drop_probability_is_binomial():
    spec = SyntheticSpec(num_identities=5, frames=200, seed=6, det_drop_prob=0.5)
    seq = gen_synthetic_sequence(spec)
    n = len(seq.gt)
    kept = len(seq.det)
    sigma = (n * 0.25) ** 0.5
    assert abs(kept - 0.5 * n) < 3 * sigma


def test_generation_is_deterministic(tmp_path):
    spec = SyntheticSpec(num_identities=3, frames=15, seed=7, det_center_jitter=1.0,
                         det_fp_rate=0.5)
    a = tmp_path / "a"
    b = tmp_path / "b"
    write_sequence(gen_synthetic_sequence(spec), a)
    write_sequence(gen_synthetic_sequence(spec), b)
    for rel in ("gt/gt.txt", "det/det.txt", "seqinfo.ini", "img1/000001.ppm",
                "img1/000015.ppm"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_gt_boxes_stay_inside_the_image():
    spec = SyntheticSpec(width=64, height=48, num_identities=6, frames=60, seed=8)
    seq = gen_synthetic_sequence(spec)
    for r in seq.gt:
        assert r.bbox.x >= 0 and r.bbox.y >= 0
        assert r.bbox.x2 <= 64 and r.bbox.y2 <= 48


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(det_drop_prob=1.5)
    with pytest.raises(ValueError):
        SyntheticSpec(frames=10, occlusions=(OcclusionEvent(0, 8, 5),))
    with pytest.raises(ValueError):
        SyntheticSpec(num_identities=2, occlusions=(OcclusionEvent(5, 1, 2),))


def test_load_spec_reports_unknown_field(tmp_path):
    p = tmp_path / "spec.json"
    p.write_text('{"frames": 10, "bogus": 1}')
    with pytest.raises(ParseError, match="bogus"):
        load_synthetic_spec(p)


def test_load_spec_roundtrip(tmp_path):
    p = tmp_path / "spec.json"
    p.write_text('{"width": 96, "height": 64, "frames": 12, "num_identities": 2,'
                 ' "seed": 9, "occlusions": [{"target": 0, "start": 3, "duration": 4}]}')
    spec = load_synthetic_spec(p)
    assert spec.width == 96 and spec.occlusions[0].duration == 4
    seq = gen_synthetic_sequence(spec)
    assert len(seq.frames) == 12
