"""Regenerate tests/fixtures/attention_golden.json.

The expected output is computed by a deliberately naive straight-line
implementation: explicit Python loops over tokens, heads, pairs, and rotation
angles, no shared code with the package forward pass. The fixture pins the
vectorized implementation against this second derivation.
"""

import json
import math
import pathlib

import numpy as np

D_MODEL = 12
N_HEADS = 2
HEAD_DIM = 6
SUB_DIMS = (2, 2, 2)
BASE = 10000.0
POSITIONS = [(0, 0, 0), (2, 0, 0), (0, 3, 5)]
SEED = 424242


def rope_one(vec, pos):
    out = list(vec)
    offset = 0
    for axis in range(3):
        d_axis = SUB_DIMS[axis]
        for j in range(d_axis // 2):
            theta = pos[axis] * BASE ** (-2.0 * j / d_axis)
            a = out[offset + 2 * j]
            b = out[offset + 2 * j + 1]
            out[offset + 2 * j] = a * math.cos(theta) - b * math.sin(theta)
            out[offset + 2 * j + 1] = a * math.sin(theta) + b * math.cos(theta)
        offset += d_axis
    return out


def matvec(mat, vec):
    return [sum(vec[i] * mat[i][o] for i in range(len(vec))) for o in range(len(mat[0]))]


def main():
    rng = np.random.default_rng(SEED)
    scale = 1.0 / math.sqrt(D_MODEL)
    weights = {name: rng.normal(0.0, scale, (D_MODEL, D_MODEL)).tolist()
               for name in ("w_q", "w_k", "w_v", "w_o")}
    tokens = rng.normal(0.0, 1.0, (3, D_MODEL)).tolist()

    n = len(tokens)
    q, k, v = [], [], []
    for i in range(n):
        qi = matvec(weights["w_q"], tokens[i])
        ki = matvec(weights["w_k"], tokens[i])
        vi = matvec(weights["w_v"], tokens[i])
        q.append([rope_one(qi[h * HEAD_DIM:(h + 1) * HEAD_DIM], POSITIONS[i])
                  for h in range(N_HEADS)])
        k.append([rope_one(ki[h * HEAD_DIM:(h + 1) * HEAD_DIM], POSITIONS[i])
                  for h in range(N_HEADS)])
        v.append([vi[h * HEAD_DIM:(h + 1) * HEAD_DIM] for h in range(N_HEADS)])

    out = []
    for i in range(n):
        ctx = []
        for h in range(N_HEADS):
            logits = [sum(q[i][h][c] * k[j][h][c] for c in range(HEAD_DIM))
                      / math.sqrt(HEAD_DIM) for j in range(n)]
            mx = max(logits)
            weights_row = [math.exp(l - mx) for l in logits]
            z = sum(weights_row)
            probs = [wr / z for wr in weights_row]
            ctx.extend(sum(probs[j] * v[j][h][c] for j in range(n))
                       for c in range(HEAD_DIM))
        out.append(matvec(weights["w_o"], ctx))

    fixture = {
        "d_model": D_MODEL,
        "n_heads": N_HEADS,
        "sub_dims": list(SUB_DIMS),
        "base": BASE,
        "positions": [list(p) for p in POSITIONS],
        "weights": weights,
        "tokens": tokens,
        "expected_output": out,
    }
    path = pathlib.Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "attention_golden.json"
    path.write_text(json.dumps(fixture, indent=1))
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
