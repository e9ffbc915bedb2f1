"""Curation pipeline tests: blur scoring, the four filter stages, instruction
generation, scorer clients, and end-to-end manifest streaming."""

import http.server
import io
import json
import threading

import numpy as np
import pytest

from lato.curation import (
    CurationConfig,
    HttpScorer,
    MockScorer,
    PairRecord,
    ScorerSuite,
    blur_score,
    config_from_json,
    curate,
    curate_paths,
    diversity_filter,
    identity_filter,
    instructed_pose_delta,
    make_instruction,
    mock_scorers,
    parse_record,
    pose_validate,
    quality_filter,
)
from lato.errors import ConfigError, SchemaError, ShapeError, StageError
from lato.instruction import Expression
from lato.kinematics import HeadPose, apply_rigid_rotation, template_2d
from lato.landmarks import LandmarkSet, serialize_landmarks
from lato.pgm import read_pgm, write_pgm


class FixedScorer:
    def __init__(self, value):
        self.value = value

    def score(self, rec_id, refs):
        return self.value


class FailingScorer:
    def score(self, rec_id, refs):
        raise StageError("scorer failed after 0 retries: injected")


def suite(aesthetic=0.9, semantic=0.6, identity=0.95):
    return ScorerSuite(aesthetic=FixedScorer(aesthetic),
                       semantic_diff=FixedScorer(semantic),
                       identity=FixedScorer(identity),
                       expression=FixedScorer(0.8))


def record(src, tgt, image="none.pgm", instruction=None, rec_id="r"):
    return PairRecord(id=rec_id, source_image=str(image), target_image=str(image),
                      source_landmarks=src, target_landmarks=tgt,
                      instruction=instruction, raw={"id": rec_id})


def rect_face(cx, cy, half_w, half_h, canvas=(512, 512)):
    # 68 points tracing a rectangle: centroid at (cx, cy), bbox 2half_w x 2half_h
    pts = np.empty((68, 2))
    pts[0::4] = (cx - half_w, cy - half_h)
    pts[1::4] = (cx + half_w, cy - half_h)
    pts[2::4] = (cx + half_w, cy + half_h)
    pts[3::4] = (cx - half_w, cy + half_h)
    return LandmarkSet(pts, canvas)


@pytest.fixture(scope="module")
def sharp_image(tmp_path_factory):
    path = tmp_path_factory.mktemp("img") / "sharp.pgm"
    rng = np.random.default_rng(99)
    write_pgm(path, rng.integers(0, 256, (32, 32)).astype(np.uint8))
    return path


class TestPgm:
    def test_round_trip(self, tmp_path):
        img = np.arange(77, dtype=np.uint8).reshape(7, 11)
        path = tmp_path / "a.pgm"
        write_pgm(path, img)
        assert np.array_equal(read_pgm(path), img)

    def test_comments_and_whitespace(self, tmp_path):
        path = tmp_path / "b.pgm"
        path.write_bytes(b"P5 # magic\n# full line\n  3\n2 # dims\n255\n" + bytes(6))
        assert read_pgm(path).shape == (2, 3)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
        with pytest.raises(SchemaError):
            read_pgm(path)

    def test_truncated_raster(self, tmp_path):
        path = tmp_path / "d.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(15))
        with pytest.raises(SchemaError):
            read_pgm(path)

    def test_16bit_rejected(self, tmp_path):
        path = tmp_path / "e.pgm"
        path.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
        with pytest.raises(SchemaError):
            read_pgm(path)


class TestBlurScore:
    def test_constant_zero(self):
        assert blur_score(np.full((16, 16), 31, dtype=np.uint8)) == 0.0

    def test_impulse_matches_hand_convolution(self):
        img = np.zeros((15, 15), dtype=np.uint8)
        img[7, 7] = 255
        # build the composite kernel by hand and place it at the impulse
        g = np.exp(-0.5 * np.arange(-3, 4, dtype=float) ** 2)
        g /= g.sum()
        gauss2d = np.outer(g, g)
        lap = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
        kernel = np.zeros((9, 9))
        for dy in range(3):
            for dx in range(3):
                kernel[dy : dy + 7, dx : dx + 7] += lap[dy, dx] * gauss2d
        response = np.zeros((15, 15))
        response[3:12, 3:12] = 255.0 * kernel
        assert blur_score(img) == pytest.approx(response.var(), abs=1e-12)

    def test_checkerboard_sharper_than_blurred(self):
        board = (np.indices((32, 32)).sum(axis=0) % 2 * 255).astype(np.uint8)
        blurred = board.reshape(8, 4, 8, 4).mean(axis=(1, 3)).repeat(4, 0).repeat(4, 1)
        assert blur_score(board) > blur_score(blurred.astype(np.uint8))

    def test_too_small(self):
        with pytest.raises(ShapeError):
            blur_score(np.zeros((6, 10), dtype=np.uint8))

    def test_non_8bit_rejected(self):
        with pytest.raises(ShapeError):
            blur_score(np.full((8, 8), 300.0))


class TestCurationConfig:
    def test_defaults(self):
        cfg = CurationConfig()
        assert cfg.blur_min == 50.0 and cfg.identity_min == 0.9

    @pytest.mark.parametrize(
        "kw",
        [
            {"centroid_band": 0.0},
            {"landmark_area_min": 1.0},
            {"change_score_min": 130.0},
            {"identity_min": 1.1},
            {"pose_tolerance_deg": 0.0},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            CurationConfig(**kw)

    def test_from_json(self):
        cfg = config_from_json('{"blur_min": 75.0}')
        assert cfg.blur_min == 75.0
        with pytest.raises(SchemaError):
            config_from_json('{"no_such_knob": 1}')


class TestQualityFilter:
    cfg = CurationConfig()

    def test_centered_pass(self, sharp_image):
        # box 10% of area: half spans sqrt(0.1)/2 * 512
        half = 0.5 * np.sqrt(0.1) * 512
        rec = record(rect_face(256, 256, half, half), None, image=sharp_image)
        dec = quality_filter(rec, self.cfg, suite(aesthetic=0.9))
        assert dec.passed and dec.stage == "quality"
        assert dec.sub_scores["aesthetic"] == 0.9

    def test_off_center_fails(self, sharp_image):
        rec = record(rect_face(0.1 * 512, 256, 60, 60), None, image=sharp_image)
        dec = quality_filter(rec, self.cfg, suite())
        assert not dec.passed and dec.reason == "centroid"

    def test_area_below_seven_percent(self, sharp_image):
        half = 0.5 * np.sqrt(0.069) * 512
        rec = record(rect_face(256, 256, half, half), None, image=sharp_image)
        dec = quality_filter(rec, self.cfg, suite())
        assert not dec.passed and dec.reason == "area"

    def test_centroid_boundary(self, sharp_image):
        # 500px canvas puts the band edges on whole pixels (200 and 300)
        for cx, expect in [(200.0, True), (199.9, False), (300.0, True), (300.1, False)]:
            rec = record(rect_face(cx, 250, 100, 100, canvas=(500, 500)), None,
                         image=sharp_image)
            dec = quality_filter(rec, self.cfg, suite())
            assert (dec.reason != "centroid") == expect, cx

    def test_area_boundary(self, sharp_image):
        for frac, expect in [(0.07 + 1e-6, True), (0.07 - 1e-6, False)]:
            half = 0.5 * np.sqrt(frac) * 512
            rec = record(rect_face(256, 256, half, half), None, image=sharp_image)
            dec = quality_filter(rec, self.cfg, suite())
            assert (dec.reason != "area") == expect

    def test_blur_boundary(self, tmp_path):
        # scale one noise field until its scores straddle the threshold
        rng = np.random.default_rng(5)
        noise = rng.normal(0, 1, (32, 32))
        noise /= np.abs(noise).max()
        def img_at(amp):
            return np.clip(128 + amp * noise, 0, 255).astype(np.uint8)
        amp_lo = next(a for a in range(1, 120) if blur_score(img_at(a)) < 50 <= blur_score(img_at(a + 1)))
        soft, crisp = img_at(amp_lo), img_at(amp_lo + 1)
        face = rect_face(256, 256, 100, 100)
        for img, expect in [(soft, False), (crisp, True)]:
            path = tmp_path / f"b{expect}.pgm"
            write_pgm(path, img)
            dec = quality_filter(record(face, None, image=path), self.cfg, suite())
            assert (dec.reason != "blur") == expect

    def test_blur_ceiling_reading(self, tmp_path, sharp_image):
        # alternative threshold direction stays reachable through config
        cfg = CurationConfig(sharpness_floor=False)
        face = rect_face(256, 256, 100, 100)
        dec = quality_filter(record(face, None, image=sharp_image), cfg, suite())
        assert dec.reason == "blur"
        blurry = tmp_path / "flat.pgm"
        write_pgm(blurry, np.full((16, 16), 80, dtype=np.uint8))
        dec = quality_filter(record(face, None, image=blurry), cfg, suite())
        assert dec.passed

    def test_aesthetic_boundary(self, sharp_image):
        face = rect_face(256, 256, 100, 100)
        rec = record(face, None, image=sharp_image)
        assert quality_filter(rec, self.cfg, suite(aesthetic=0.5)).passed
        dec = quality_filter(rec, self.cfg, suite(aesthetic=0.499))
        assert not dec.passed and dec.reason == "aesthetic"

    def test_unreadable_image(self, tmp_path):
        rec = record(rect_face(256, 256, 100, 100), None, image=tmp_path / "missing.pgm")
        dec = quality_filter(rec, self.cfg, suite())
        assert not dec.passed and dec.reason.startswith("io:")


class TestDiversityFilter:
    cfg = CurationConfig()

    def test_identical_pair_too_static(self):
        f = template_2d()
        dec = diversity_filter(record(f, f), self.cfg, suite())
        assert not dec.passed and dec.reason == "too-static" and dec.score == 0.0

    def test_uniform_shift_passes(self):
        f = template_2d()
        g = LandmarkSet(f.points + 30.0)
        dec = diversity_filter(record(f, g), self.cfg, suite(semantic=0.6))
        assert dec.passed and dec.score == pytest.approx(30.0)

    def test_outlier_band(self):
        f = template_2d()
        g = LandmarkSet(f.points - 130.0)
        dec = diversity_filter(record(f, g), self.cfg, suite())
        assert not dec.passed and dec.reason == "copy-paste/outlier band"

    def test_semantic_fail(self):
        f = template_2d()
        g = LandmarkSet(f.points + 30.0)
        dec = diversity_filter(record(f, g), self.cfg, suite(semantic=0.39))
        assert not dec.passed and dec.reason == "semantic"

    def test_change_boundaries(self):
        f = template_2d()
        for shift, expect in [(23.01, True), (22.99, False), (119.99, True), (120.5, False)]:
            g = LandmarkSet(f.points + shift)
            dec = diversity_filter(record(f, g), self.cfg, suite())
            assert dec.passed == expect, (shift, dec.reason)

    def test_semantic_boundary(self):
        f = template_2d()
        g = LandmarkSet(f.points + 30.0)
        assert diversity_filter(record(f, g), self.cfg, suite(semantic=0.4)).passed
        assert not diversity_filter(record(f, g), self.cfg, suite(semantic=0.3999)).passed


class TestIdentityFilter:
    cfg = CurationConfig()

    def test_pass_and_fail(self):
        f = template_2d()
        rec = record(f, f)
        assert identity_filter(rec, self.cfg, suite(identity=0.95)).passed
        dec = identity_filter(rec, self.cfg, suite(identity=0.89))
        assert not dec.passed and dec.score == 0.89 and dec.threshold == 0.9

    def test_boundary_inclusive(self):
        rec = record(template_2d(), template_2d())
        assert identity_filter(rec, self.cfg, suite(identity=0.9)).passed
        assert not identity_filter(rec, self.cfg, suite(identity=0.8999)).passed

    def test_missing_scorer(self):
        rec = record(template_2d(), template_2d())
        bad = ScorerSuite(aesthetic=FixedScorer(1), semantic_diff=FixedScorer(1),
                          identity=None, expression=None)
        with pytest.raises(ConfigError):
            identity_filter(rec, self.cfg, bad)


class TestPoseValidate:
    cfg = CurationConfig()

    def test_matching_rotation_passes(self):
        f = template_2d()
        g = apply_rigid_rotation(f, 30.0, 0.0)
        rec = record(f, g, instruction="Turn his/her head 30 degrees to the left")
        dec = pose_validate(rec, instructed_pose_delta(rec.instruction), self.cfg)
        assert dec.passed and dec.score <= 2.0

    def test_wrong_magnitude_fails(self):
        f = template_2d()
        g = apply_rigid_rotation(f, 30.0, 0.0)
        rec = record(f, g, instruction="Turn his/her head 60 degrees to the left")
        dec = pose_validate(rec, instructed_pose_delta(rec.instruction), self.cfg)
        assert not dec.passed and dec.score == pytest.approx(30.0, abs=2.0)

    def test_no_rotation_clause_not_applicable(self):
        rec = record(template_2d(), template_2d(),
                     instruction="Make his/her facial expression happy normally")
        dec = pose_validate(rec, instructed_pose_delta(rec.instruction), self.cfg)
        assert dec.passed and dec.reason == "not-applicable"

    def test_tolerance_both_sides(self):
        f = template_2d()
        g = apply_rigid_rotation(f, 30.0, 0.0)
        rec = record(f, g)
        near = HeadPose(pitch=0.0, yaw=38.0)  # dev ~ 8
        far = HeadPose(pitch=0.0, yaw=42.0)  # dev ~ 12
        assert pose_validate(rec, near, self.cfg).passed
        assert not pose_validate(rec, far, self.cfg).passed


class TestMakeInstruction:
    def test_yaw_only(self):
        rec = record(template_2d(), template_2d())
        make_instruction(rec, pose_delta=HeadPose(pitch=0.0, yaw=-30.0))
        assert rec.instruction == "Turn his/her head 30 degrees to the right"
        assert rec.raw["instruction"] == rec.instruction

    def test_expression_and_pitch(self):
        rec = record(template_2d(), template_2d())
        make_instruction(rec, expression=Expression("happy", "strongly"),
                         pose_delta=(30.0, 0.0))
        assert rec.instruction == (
            "Make his/her facial expression happy strongly "
            "and turn his/her head 30 degrees up")

    def test_no_edit(self):
        rec = record(template_2d(), template_2d())
        with pytest.raises(StageError):
            make_instruction(rec, expression=None, pose_delta=(0.4, -0.2))

    def test_round_trips_through_parser(self):
        rec = record(template_2d(), template_2d())
        ins = make_instruction(rec, pose_delta=HeadPose(pitch=-15.0, yaw=20.0))
        assert instructed_pose_delta(rec.instruction) == HeadPose(pitch=-15.0, yaw=20.0)
        assert ins.yaw() == 20 and ins.pitch() == -15


class TestScorers:
    def test_mock_deterministic_range(self):
        m = MockScorer("identity", seed=3)
        vals = [m.score(f"r{i}", []) for i in range(200)]
        assert vals == [MockScorer("identity", seed=3).score(f"r{i}", []) for i in range(200)]
        assert all(0.0 <= v < 1.0 for v in vals)
        assert MockScorer("identity", seed=4).score("r0", []) != m.score("r0", [])

    def test_http_scorer_round_trip(self):
        class Handler(http.server.BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                out = json.dumps({"score": 0.25 if body["kind"] == "identity" else 0.75})
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.end_headers()
                self.wfile.write(out.encode())

            def log_message(self, *a):
                pass

        server = http.server.HTTPServer(("127.0.0.1", 0), Handler)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            url = f"http://127.0.0.1:{server.server_address[1]}/"
            assert HttpScorer("identity", url).score("x", ["a"]) == 0.25
            assert HttpScorer("aesthetic", url).score("x", ["a"]) == 0.75
        finally:
            server.shutdown()

    def test_http_scorer_exhausts_retries(self):
        scorer = HttpScorer("identity", "http://127.0.0.1:9/", timeout=0.2, retries=0)
        with pytest.raises(StageError, match="0 retries"):
            scorer.score("x", [])


class TestCurate:
    def test_empty_manifest(self):
        out = io.StringIO()
        summary = curate([], CurationConfig(), mock_scorers(), out)
        assert out.getvalue() == ""
        assert summary["records_in"] == 0 and summary["passed_all"] == 0

    def test_designed_rates_exact(self, curation_manifest, tmp_path):
        mani = curation_manifest
        out_path = tmp_path / "curated.jsonl"
        summary = curate_paths(mani["manifest"], out_path, mani["config"],
                               mock_scorers(mani["scorer_seed"]))
        exp = mani["expected"]
        assert summary["records_in"] == exp["records_in"]
        assert summary["malformed"] == exp["malformed"]
        assert summary["quarantined"] == exp["quarantined"]
        assert summary["passed_all"] == exp["passed_all"]
        for stage, (evaluated, passed) in exp["stage_counts"].items():
            got = summary["stages"][stage]
            assert (got["evaluated"], got["passed"]) == (evaluated, passed), stage

    def test_rerun_byte_identical(self, curation_manifest, tmp_path):
        mani = curation_manifest
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        sa = curate_paths(mani["manifest"], a, mani["config"], mock_scorers(mani["scorer_seed"]))
        sb = curate_paths(mani["manifest"], b, mani["config"], mock_scorers(mani["scorer_seed"]))
        assert a.read_bytes() == b.read_bytes()
        assert sa == sb

    def test_every_record_in_output(self, curation_manifest, tmp_path):
        mani = curation_manifest
        out_path = tmp_path / "c.jsonl"
        curate_paths(mani["manifest"], out_path, mani["config"],
                     mock_scorers(mani["scorer_seed"]))
        in_ids = [json.loads(l)["id"] for l in mani["manifest"].read_text().splitlines()]
        out_lines = [json.loads(l) for l in out_path.read_text().splitlines()]
        assert [o["id"] for o in out_lines] == in_ids
        for o in out_lines:
            assert o["stage_decisions"], o["id"]

    def test_short_circuit_lengths(self, curation_manifest, tmp_path):
        out_path = tmp_path / "d.jsonl"
        mani = curation_manifest
        curate_paths(mani["manifest"], out_path, mani["config"],
                     mock_scorers(mani["scorer_seed"]))
        for line in out_path.read_text().splitlines():
            obj = json.loads(line)
            decs = obj["stage_decisions"]
            if obj["passed"]:
                assert len(decs) == 4 and all(d["passed"] for d in decs)
            else:
                assert all(d["passed"] for d in decs[:-1]) and not decs[-1]["passed"]

    def test_split_concat_equals_unsplit(self, curation_manifest, tmp_path):
        mani = curation_manifest
        lines = mani["manifest"].read_text().splitlines(keepends=True)
        whole = io.StringIO()
        curate(lines, mani["config"], mock_scorers(mani["scorer_seed"]), whole)
        first, second = io.StringIO(), io.StringIO()
        curate(lines[:37], mani["config"], mock_scorers(mani["scorer_seed"]), first)
        curate(lines[37:], mani["config"], mock_scorers(mani["scorer_seed"]), second)
        assert first.getvalue() + second.getvalue() == whole.getvalue()

    def test_malformed_lines_skipped(self, sharp_image):
        f = template_2d()
        good = {
            "id": "ok", "source_image": str(sharp_image), "target_image": str(sharp_image),
            "source_landmarks": json.loads(serialize_landmarks(f)),
            "target_landmarks": json.loads(serialize_landmarks(LandmarkSet(f.points + 30.0))),
        }
        lines = ["{not json", json.dumps({"id": "missing-fields"}), json.dumps(good)]
        out = io.StringIO()
        summary = curate(lines, CurationConfig(), suite(), out)
        assert summary["malformed"] == 2 and summary["records_in"] == 3
        assert len(out.getvalue().splitlines()) == 1

    def test_scorer_blowup_quarantines(self, sharp_image):
        f = template_2d()
        rec_line = json.dumps({
            "id": "q", "source_image": str(sharp_image), "target_image": str(sharp_image),
            "source_landmarks": json.loads(serialize_landmarks(f)),
            "target_landmarks": json.loads(serialize_landmarks(LandmarkSet(f.points + 30.0))),
        })
        scorers = ScorerSuite(aesthetic=FixedScorer(0.9), semantic_diff=FixedScorer(0.6),
                              identity=FailingScorer(), expression=None)
        out = io.StringIO()
        summary = curate([rec_line], CurationConfig(), scorers, out)
        assert summary["quarantined"] == 1 and summary["passed_all"] == 0
        obj = json.loads(out.getvalue())
        assert obj["stage_decisions"][-1]["reason"].startswith("error:")

    def test_blur_threshold_monotone(self, curation_manifest, tmp_path):
        # raising blur_min can only shrink the quality-pass set
        mani = curation_manifest
        def pass_ids(cfg):
            out = io.StringIO()
            curate(mani["manifest"].read_text().splitlines(), cfg,
                   mock_scorers(mani["scorer_seed"]), out)
            ids = set()
            for line in out.getvalue().splitlines():
                obj = json.loads(line)
                if any(d["stage"] == "quality" and d["passed"] for d in obj["stage_decisions"]):
                    ids.add(obj["id"])
            return ids
        base = pass_ids(CurationConfig())
        stricter = pass_ids(CurationConfig(blur_min=300.0))
        assert stricter <= base


class TestRecordParsing:
    def test_round_trip(self, sharp_image):
        f = template_2d()
        obj = {
            "id": "abc", "source_image": str(sharp_image), "target_image": str(sharp_image),
            "source_landmarks": json.loads(serialize_landmarks(f)),
            "target_landmarks": json.loads(serialize_landmarks(f)),
            "instruction": "Turn his/her head 10 degrees down",
        }
        rec = parse_record(json.dumps(obj))
        assert rec.id == "abc"
        assert np.allclose(rec.source_landmarks.points, f.points)
        assert rec.instruction == obj["instruction"]

    def test_bad_instruction_type(self):
        with pytest.raises(SchemaError):
            parse_record(json.dumps({
                "id": "x", "source_image": "a", "target_image": "b",
                "source_landmarks": {}, "target_landmarks": {}, "instruction": 5}))
