import json
import pathlib

import numpy as np
import pytest

from lato.curation import CurationConfig, MockScorer
from lato.kinematics import apply_rigid_rotation, template_2d
from lato.landmarks import LandmarkSet, serialize_landmarks
from lato.pgm import write_pgm

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def sample_face_json() -> str:
    return (FIXTURES / "sample_face.json").read_text().strip()


@pytest.fixture(scope="session")
def sample_face_edited_json() -> str:
    return (FIXTURES / "sample_face_edited.json").read_text().strip()


def _landmarks_obj(f: LandmarkSet) -> dict:
    return json.loads(serialize_landmarks(f))


def _find_ids(prefix, count, predicate, seed):
    # walk a deterministic id stream until the mock scorers land where the
    # record class needs them
    aes = MockScorer("aesthetic", seed)
    sem = MockScorer("semantic_diff", seed)
    idn = MockScorer("identity", seed)
    ids, k = [], 0
    while len(ids) < count:
        cand = f"{prefix}-{k:04d}"
        k += 1
        if predicate(aes.score(cand, []), sem.score(cand, []), idn.score(cand, [])):
            ids.append(cand)
    return ids


def build_curation_manifest(root: pathlib.Path, scorer_seed: int = 0) -> dict:
    """Write a 100-record manifest with exactly designed stage outcomes.

    Designed counts: 50 fail quality (14 centroid, 13 area, 13 blur,
    10 aesthetic), 10 fail diversity (4 static, 3 outlier, 3 semantic),
    10 fail identity, 10 fail pose, 20 pass (10 without applicable
    instruction, 10 with a matching rotation).
    """
    root = pathlib.Path(root)
    rng = np.random.default_rng(12345)
    sharp = root / "sharp.pgm"
    blurry = root / "blurry.pgm"
    write_pgm(sharp, rng.integers(0, 256, (32, 32)).astype(np.uint8))
    write_pgm(blurry, np.full((16, 16), 100, dtype=np.uint8))

    base = template_2d()
    centroid = base.points.mean(axis=0)
    off_center = LandmarkSet(base.points - np.array([130.0, 0.0]))
    tiny = LandmarkSet(centroid + 0.6 * (base.points - centroid))
    shift30 = LandmarkSet(base.points + 30.0)
    outlier = LandmarkSet(base.points - 130.0)
    rot = apply_rigid_rotation(base, 30.0, 0.0)
    rot_shift = LandmarkSet(rot.points + 30.0)

    yes = lambda a, s, i: a >= 0.5 and s >= 0.4 and i >= 0.9
    classes = [
        # (prefix, count, predicate, source, target, instruction, image)
        ("centroid", 14, lambda a, s, i: True, off_center,
         LandmarkSet(off_center.points + 30.0), None, sharp),
        ("area", 13, lambda a, s, i: True, tiny,
         LandmarkSet(tiny.points + 30.0), None, sharp),
        ("blur", 13, lambda a, s, i: True, base, shift30, None, blurry),
        ("lowaes", 10, lambda a, s, i: a < 0.5, base, shift30, None, sharp),
        ("static", 4, lambda a, s, i: a >= 0.5, base, base, None, sharp),
        ("outlier", 3, lambda a, s, i: a >= 0.5, base, outlier, None, sharp),
        ("lowsem", 3, lambda a, s, i: a >= 0.5 and s < 0.4, base, shift30, None, sharp),
        ("lowid", 10, lambda a, s, i: a >= 0.5 and s >= 0.4 and i < 0.9,
         base, shift30, None, sharp),
        ("badpose", 10, yes, base, shift30,
         "Turn his/her head 30 degrees to the left", sharp),
        ("noins", 10, yes, base, shift30, None, sharp),
        ("goodrot", 10, yes, base, rot_shift,
         "Turn his/her head 30 degrees to the left", sharp),
    ]
    records = []
    for prefix, count, pred, src, tgt, ins, img in classes:
        for rec_id in _find_ids(prefix, count, pred, scorer_seed):
            obj = {
                "id": rec_id,
                "source_image": str(img),
                "target_image": str(img),
                "source_landmarks": _landmarks_obj(src),
                "target_landmarks": _landmarks_obj(tgt),
            }
            if ins is not None:
                obj["instruction"] = ins
            records.append(obj)
    manifest = root / "pairs.jsonl"
    manifest.write_text("".join(json.dumps(r) + "\n" for r in records))
    return {
        "manifest": manifest,
        "config": CurationConfig(),
        "scorer_seed": scorer_seed,
        "expected": {
            "records_in": 100,
            "malformed": 0,
            "quarantined": 0,
            "passed_all": 20,
            "stage_counts": {
                "quality": (100, 50),
                "diversity": (50, 40),
                "identity": (40, 30),
                "pose": (30, 20),
            },
        },
    }


@pytest.fixture(scope="session")
def curation_manifest(tmp_path_factory):
    return build_curation_manifest(tmp_path_factory.mktemp("curation"))
