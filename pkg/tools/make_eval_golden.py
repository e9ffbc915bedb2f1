"""Generate the frozen two-record eval-report golden fixture.

Every expected number is computed here by straight-line code that shares
nothing with the package implementation: mock scores via hashlib directly,
SSIM via explicit per-window loops, the rectified identity score via the
inline formula. The package test replays the manifest through evaluate()
and must reproduce this report.

Writes tests/fixtures/eval_src.pgm, eval_edit.pgm, eval_golden.json.
"""

import hashlib
import json
import math
import os

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
FIXTURES = os.path.join(HERE, "..", "tests", "fixtures")

SEED = 77
NOISE_SIGMA = 35.0


def write_pgm_raw(path, img):
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.astype(np.uint8).tobytes())


def mock_score(seed, kind, rec_id):
    digest = hashlib.sha256(f"{seed}:{kind}:{rec_id}".encode()).hexdigest()
    return int(digest[:12], 16) / float(16**12)


def loop_ssim(a, b):
    half = 5
    gk = [math.exp(-0.5 * (i / 1.5) ** 2) for i in range(-half, half + 1)]
    s = sum(gk)
    gk = [v / s for v in gk]
    w = [[gk[i] * gk[j] for j in range(11)] for i in range(11)]
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    vals = []
    for r in range(a.shape[0] - 10):
        for c in range(a.shape[1] - 10):
            ma = mb = ea2 = eb2 = eab = 0.0
            for i in range(11):
                for j in range(11):
                    pa = float(a[r + i, c + j])
                    pb = float(b[r + i, c + j])
                    ma += w[i][j] * pa
                    mb += w[i][j] * pb
                    ea2 += w[i][j] * pa * pa
                    eb2 += w[i][j] * pb * pb
                    eab += w[i][j] * pa * pb
            va = ea2 - ma * ma
            vb = eb2 - mb * mb
            cab = eab - ma * mb
            vals.append(((2 * ma * mb + c1) * (2 * cab + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def rip(s_arc, phi_ins, phi_real, alpha=2.0, eps=1e-5):
    p = min(1.0, abs((phi_ins - phi_real) / (phi_ins + eps)) ** alpha)
    return max(0.0, s_arc - p)


def main():
    rng = np.random.default_rng(SEED)
    src = rng.integers(0, 256, (24, 24)).astype(np.uint8)
    noise = rng.normal(0.0, NOISE_SIGMA, (24, 24))
    edit = np.clip(np.rint(src.astype(np.float64) + noise), 0, 255).astype(np.uint8)
    write_pgm_raw(os.path.join(FIXTURES, "eval_src.pgm"), src)
    write_pgm_raw(os.path.join(FIXTURES, "eval_edit.pgm"), edit)

    # landmark payloads: a fixed synthetic face and a (2, -1) shift of it
    from lato.kinematics import template_2d
    from lato.landmarks import LandmarkSet, serialize_landmarks

    base = template_2d()
    moved = LandmarkSet(base.points + np.array([2.0, -1.0]), base.canvas)
    target_obj = json.loads(serialize_landmarks(base))
    pred_obj = json.loads(serialize_landmarks(moved))
    lm_err = 0.0
    for region in target_obj:
        for pq, tq in zip(pred_obj[region], target_obj[region]):
            lm_err += abs(pq[0] - tq[0]) + abs(pq[1] - tq[1])
    lm_err /= 2 * 68

    records = [
        {
            "id": "ex-01",
            "source_image": "eval_src.pgm",
            "edited_image": "eval_edit.pgm",
            "instruction": "Make his facial expression happy normally",
            "s_arc": 0.9,
            "predicted_landmarks": pred_obj,
            "target_landmarks": target_obj,
        },
        {
            "id": "ex-02",
            "source_image": "eval_src.pgm",
            "edited_image": "eval_src.pgm",
        },
    ]

    phi_real_1 = 1.0 - min(1.0, max(0.0, loop_ssim(src, edit)))
    ip1 = rip(0.9, 0.25, phi_real_1)
    s_arc_2 = mock_score(0, "identity", "ex-02")
    ip2 = rip(s_arc_2, 0.0, 0.0)
    samples = [
        {
            "id": "ex-01",
            "SC": mock_score(0, "sc", "ex-01"),
            "VQ": mock_score(0, "vq", "ex-01"),
            "NA": mock_score(0, "na", "ex-01"),
            "IP": ip1,
            "landmark_error": lm_err,
        },
        {
            "id": "ex-02",
            "SC": mock_score(0, "sc", "ex-02"),
            "VQ": mock_score(0, "vq", "ex-02"),
            "NA": mock_score(0, "na", "ex-02"),
            "IP": ip2,
            "landmark_error": None,
        },
    ]
    aggregates = {}
    missing = {}
    for m in ("SC", "VQ", "NA", "IP", "landmark_error"):
        present = [s[m] for s in samples if s[m] is not None]
        aggregates[m] = sum(present) / len(present) if present else None
        missing[m] = sum(1 for s in samples if s[m] is None)
    golden = {
        "records": records,
        "expected": {
            "schema_version": 1,
            "provenance": "mock",
            "count": 2,
            "aggregates": aggregates,
            "missing": missing,
            "samples": samples,
        },
    }
    out = os.path.join(FIXTURES, "eval_golden.json")
    with open(out, "w") as fh:
        json.dump(golden, fh, indent=1)
    print("phi_real_1 =", phi_real_1, "ip1 =", ip1, "ip2 =", ip2)
    print("wrote", out)


if __name__ == "__main__":
    main()
