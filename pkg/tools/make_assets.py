"""Regenerate the kinematics asset files.

Builds the canonical 3D face template (symmetrized lift of the reference
frontal landmark set under a fixed per-region depth profile) and the authored
expression displacement fields, then writes both JSON assets under
src/lato/assets/.  Output is deterministic; run from anywhere.
"""

import json
import pathlib

ROOT = pathlib.Path(__file__).resolve().parents[1]
SRC_JSON = ROOT / "tests" / "fixtures" / "sample_face.json"
ASSET_DIR = ROOT / "src" / "lato" / "assets"

# Left/right correspondence under the vertical midline for the 68-point
# layout.  Pairs list (left index, right index); singles sit on the midline.
MIRROR_PAIRS = (
    # jaw
    (0, 16), (1, 15), (2, 14), (3, 13), (4, 12), (5, 11), (6, 10), (7, 9),
    # brows
    (17, 26), (18, 25), (19, 24), (20, 23), (21, 22),
    # nose base
    (31, 35), (32, 34),
    # eyes (outer-outer, lids, inner-inner)
    (36, 45), (37, 44), (38, 43), (39, 42), (40, 47), (41, 46),
    # outer mouth
    (48, 54), (49, 53), (50, 52), (55, 59), (56, 58),
    # inner mouth
    (60, 64), (61, 63), (65, 67),
)
MIDLINE_SINGLES = (8, 27, 28, 29, 30, 33, 51, 57, 62, 66)


def depth_profile():
    """Per-point Z in pixels, positive toward the camera.

    Jaw ring -40 (ears) rising to 0 (chin) along a quadratic curve (depth
    falls off slowly near the chin, fast toward the ears), brows +10, nose
    bridge +10 rising to the +40 tip at index 33, eyes +5, mouth +15.
    """
    z = [0.0] * 68
    for i in range(0, 17):
        z[i] = -40.0 * (abs(i - 8) / 8.0) ** 2
    for i in range(17, 27):
        z[i] = 10.0
    z[27], z[28], z[29], z[30] = 10.0, 20.0, 25.0, 30.0
    z[31], z[32], z[33], z[34], z[35] = 20.0, 30.0, 40.0, 30.0, 20.0
    for i in range(36, 48):
        z[i] = 5.0
    for i in range(48, 68):
        z[i] = 15.0
    return z


def load_reference_points():
    obj = json.loads(SRC_JSON.read_text())
    pts = []
    for key in ("JAW/BROWS", "NOSE", "EYES", "MOUTH"):
        pts.extend([float(x), float(y)] for x, y in obj[key])
    assert len(pts) == 68
    return pts


def symmetrize(pts):
    """Make the set exactly bilaterally symmetric about its mean-x midline."""
    mx = sum(p[0] for p in pts) / len(pts)
    out = [list(p) for p in pts]
    for i, j in MIRROR_PAIRS:
        half_span = ((pts[i][0] - mx) - (pts[j][0] - mx)) / 2.0
        mean_y = (pts[i][1] + pts[j][1]) / 2.0
        out[i] = [mx + half_span, mean_y]
        out[j] = [mx - half_span, mean_y]
    for i in MIDLINE_SINGLES:
        out[i][0] = mx
    return out


def expression_fields():
    """Authored per-expression displacement fields at normal intensity.

    Conventions: y grows downward, so negative dy moves a point up.  Every
    nonzero vector has norm in the 5..25 px band.  Fields are bilaterally
    symmetric (dx antisymmetric, dy symmetric under MIRROR_PAIRS) so
    symmetric faces stay symmetric.
    """
    fields = {}

    def blank():
        return [[0.0, 0.0] for _ in range(68)]

    def set_pair(f, left, right, dx, dy):
        f[left] = [dx, dy]
        f[right] = [-dx, dy]

    happy = blank()
    set_pair(happy, 48, 54, -10, -15)   # corners up and apart
    set_pair(happy, 49, 53, -6, -10)
    set_pair(happy, 50, 52, -3, -8)
    happy[51] = [0, -8]
    set_pair(happy, 59, 55, -5, -9)
    set_pair(happy, 58, 56, -3, -6)
    happy[57] = [0, -5]
    set_pair(happy, 60, 64, -8, -12)
    set_pair(happy, 61, 63, -3, -8)
    happy[62] = [0, -7]
    set_pair(happy, 67, 65, -3, -6)
    happy[66] = [0, -5]
    fields["happy"] = happy

    sad = blank()
    set_pair(sad, 48, 54, 3, 8)         # corners sag inward and down
    set_pair(sad, 49, 53, 2, 5)
    sad[51] = [0, 5]
    set_pair(sad, 59, 55, 2, 5)
    sad[57] = [0, 6]
    set_pair(sad, 60, 64, 3, 7)
    set_pair(sad, 61, 63, 2, 5)
    sad[62] = [0, 5]
    set_pair(sad, 67, 65, 2, 5)
    sad[66] = [0, 5]
    set_pair(sad, 21, 22, 0, -8)        # inner brows lift
    set_pair(sad, 20, 23, 0, -6)
    set_pair(sad, 19, 24, 0, -5)
    fields["sad"] = sad

    angry = blank()
    set_pair(angry, 21, 22, 4, 8)       # inner brows knit down
    set_pair(angry, 20, 23, 3, 6)
    set_pair(angry, 19, 24, 2, 5)
    set_pair(angry, 48, 54, 3, 4)       # pressed corners
    set_pair(angry, 31, 35, -4, -3)     # nostril flare
    fields["angry"] = angry

    scared = blank()
    for l, r, dy in ((17, 26, -8), (18, 25, -9), (19, 24, -10), (20, 23, -11), (21, 22, -12)):
        set_pair(scared, l, r, 0, dy)   # brows shoot up
    for l, r in ((37, 44), (38, 43)):
        set_pair(scared, l, r, 0, -5)   # eyes widen
    for l, r in ((41, 46), (40, 47)):
        set_pair(scared, l, r, 0, 5)
    set_pair(scared, 48, 54, 5, 2)      # mouth opens, corners pull in
    set_pair(scared, 60, 64, 5, 2)
    set_pair(scared, 50, 52, 0, -5)
    scared[51] = [0, -5]
    set_pair(scared, 61, 63, 0, -5)
    scared[62] = [0, -5]
    set_pair(scared, 59, 55, 0, 10)
    set_pair(scared, 58, 56, 0, 14)
    scared[57] = [0, 16]
    set_pair(scared, 67, 65, 0, 12)
    scared[66] = [0, 14]
    set_pair(scared, 6, 10, 0, 5)       # jaw drops
    set_pair(scared, 7, 9, 0, 8)
    scared[8] = [0, 10]
    fields["scared"] = scared

    surprised = blank()
    for l, r, dy in ((17, 26, -10), (18, 25, -11), (19, 24, -12), (20, 23, -12), (21, 22, -12)):
        set_pair(surprised, l, r, 0, dy)
    for l, r in ((37, 44), (38, 43)):
        set_pair(surprised, l, r, 0, -5)
    for l, r in ((41, 46), (40, 47)):
        set_pair(surprised, l, r, 0, 5)
    set_pair(surprised, 48, 54, 8, 0)   # mouth rounds: corners pull in hard
    set_pair(surprised, 60, 64, 7, 0)
    set_pair(surprised, 49, 53, 5, -2)
    set_pair(surprised, 50, 52, 0, -6)
    surprised[51] = [0, -7]
    set_pair(surprised, 61, 63, 0, -5)
    surprised[62] = [0, -6]
    set_pair(surprised, 59, 55, 3, 12)
    set_pair(surprised, 58, 56, 0, 16)
    surprised[57] = [0, 18]
    set_pair(surprised, 67, 65, 0, 13)
    surprised[66] = [0, 15]
    set_pair(surprised, 6, 10, 0, 6)
    set_pair(surprised, 7, 9, 0, 9)
    surprised[8] = [0, 12]
    fields["surprised"] = surprised

    disgusted = blank()
    set_pair(disgusted, 49, 53, 0, -6)  # upper lip curls
    set_pair(disgusted, 50, 52, 0, -7)
    disgusted[51] = [0, -8]
    set_pair(disgusted, 61, 63, 0, -6)
    disgusted[62] = [0, -7]
    for l, r in ((31, 35), (32, 34)):
        set_pair(disgusted, l, r, 0, -5)  # nose wrinkles up
    disgusted[33] = [0, -5]
    set_pair(disgusted, 19, 24, 0, 5)   # brows press down
    set_pair(disgusted, 20, 23, 0, 6)
    set_pair(disgusted, 21, 22, 0, 6)
    set_pair(disgusted, 48, 54, 0, 5)
    fields["disgusted"] = disgusted

    return fields


def main():
    pts2d = symmetrize(load_reference_points())
    z = depth_profile()
    points = [[round(x, 4), round(y, 4), round(zz, 4)] for (x, y), zz in zip(pts2d, z)]

    template = {
        "schema_version": 1,
        "canvas": [512, 512],
        "points": points,
    }
    fields = {
        "schema_version": 1,
        "intensity_multipliers": {"slightly": 0.5, "normally": 1.0, "strongly": 1.5},
        "fields": {
            name: [[float(dx), float(dy)] for dx, dy in vecs]
            for name, vecs in expression_fields().items()
        },
    }

    ASSET_DIR.mkdir(parents=True, exist_ok=True)
    (ASSET_DIR / "face_template.json").write_text(
        json.dumps(template, indent=1) + "\n"
    )
    (ASSET_DIR / "expression_fields.json").write_text(
        json.dumps(fields, indent=1) + "\n"
    )
    print("wrote", ASSET_DIR / "face_template.json")
    print("wrote", ASSET_DIR / "expression_fields.json")


if __name__ == "__main__":
    main()
