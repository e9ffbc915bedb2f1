"""Single command-line entry point wiring all modules together.

Machine output is JSON (stdout or --out); human-readable text only behind
--pretty. Exit codes: 0 success, 1 validation or usage error, 2 IO error.
Nothing touches the network unless --scorers http:... is given explicitly.
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from io import StringIO

import numpy as np

from . import curation, tokenizer
from .errors import LatoError, SchemaError
from .fuser import attention_cost
from .instruction import parse_instruction
from .kinematics import predict_landmarks, synthesize_landmarks
from .landmarks import parse_landmarks, serialize_landmarks
from .metrics import EvalScorers, IpInputs, evaluate, mock_eval_scorers, rectified_ip, rip_penalty
from .pgm import read_pgm, write_pgm
from .posenc import landmark_positions
from .tokenizer import FacialTokens, TokenizerConfig, load_model, save_model, train

DEFAULT_SEED = 0

log = logging.getLogger("lato")


@dataclass(frozen=True)
class CliConfig:
    subcommand: str
    in_path: str = None
    out_path: str = None
    config_path: str = None
    seed: int = DEFAULT_SEED
    verbosity: int = 0


class _CliUsage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract reserves 2 for IO errors
    def error(self, message):
        raise _CliUsage(message)


def _emit(text: str, out_path):
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _emit_json(obj, out_path):
    _emit(json.dumps(obj, indent=1), out_path)


def _read_text(path: str) -> str:
    with open(path) as fh:
        return fh.read()


def _load_curation_config(path) -> curation.CurationConfig:
    # --config wins, then the LATO_CONFIG env var, then library defaults
    if path is None:
        path = os.environ.get("LATO_CONFIG") or None
    if path is None:
        return curation.CurationConfig()
    return curation.config_from_json(_read_text(path))


def _curation_scorers(source: str, seed: int) -> curation.ScorerSuite:
    if source == "mock":
        return curation.mock_scorers(seed)
    if source.startswith("http:") or source.startswith("https:"):
        return curation.http_scorers(source)
    raise SchemaError(f"unknown scorer source {source!r}, expected mock or http:...")


def _eval_scorers(source: str, seed: int) -> EvalScorers:
    if source == "mock":
        return mock_eval_scorers(seed)
    if source.startswith("http:") or source.startswith("https:"):
        kinds = {k: curation.HttpScorer(source, k) for k in ("sc", "vq", "na", "identity")}
        return EvalScorers(provenance=source, **kinds)
    raise SchemaError(f"unknown scorer source {source!r}, expected mock or http:...")


def cmd_train_tokenizer(args) -> int:
    kwargs = dict(m=args.m, d=args.d, beta=args.beta, blocks=args.blocks,
                  lr=args.lr, batch=args.batch, steps=args.steps, seed=args.seed)
    config = TokenizerConfig(**kwargs)
    if args.data:
        canvas = tuple(args.canvas)
        faces = [parse_landmarks(line, canvas)
                 for line in _read_text(args.data).splitlines() if line.strip()]
    else:
        faces = synthesize_landmarks(args.synthetic, seed=args.seed)
    if not faces:
        raise SchemaError("training set is empty")
    log.info("training on %d landmark sets", len(faces))
    model, tlog = train(config, faces)
    save_model(model, args.out)
    tail = min(200, len(tlog.total))
    summary = {
        "model": args.out,
        "steps": int(config.steps),
        "final_total_loss": float(tlog.total[-tail:].mean()),
        "final_rec_loss": float(tlog.rec[-tail:].mean()),
        "utilization": float((tlog.usage > 0).mean()),
        "resets": len(tlog.resets),
    }
    _emit_json(summary, None)
    return 0


def cmd_tokenize(args) -> int:
    model = load_model(args.model)
    f = parse_landmarks(_read_text(args.landmarks))
    toks = tokenizer.quantize(tokenizer.encode(model, f), model.codebook)
    _emit_json({"indices": toks.indices.tolist(), "d": int(model.config.d)}, args.out)
    return 0


def cmd_detokenize(args) -> int:
    model = load_model(args.model)
    try:
        obj = json.loads(_read_text(args.tokens))
    except json.JSONDecodeError as e:
        raise SchemaError(f"tokens file is not valid JSON: {e}") from e
    if not isinstance(obj, dict) or "indices" not in obj:
        raise SchemaError('tokens file must be an object with an "indices" array')
    indices = np.asarray(obj["indices"], dtype=np.int64)
    if indices.min() < 0 or indices.max() >= model.config.m:
        raise SchemaError(f"token index out of range for codebook size {model.config.m}")
    toks = FacialTokens(indices, model.codebook[indices])
    _emit(serialize_landmarks(tokenizer.decode(model, toks)), args.out)
    return 0


def cmd_predict(args) -> int:
    f = parse_landmarks(_read_text(args.landmarks))
    ins = parse_instruction(args.instruction)
    pred, trace = predict_landmarks(f, ins)
    _emit(serialize_landmarks(pred), args.out)
    if args.trace:
        _emit_json(trace.to_json_obj(), args.trace)
    return 0


def cmd_posenc(args) -> int:
    f = parse_landmarks(_read_text(args.landmarks))
    triples = landmark_positions(f, stride=args.stride)
    w, h = f.canvas
    out = {
        "stride": args.stride,
        "grid": [h // args.stride, w // args.stride],
        "triples": [list(t.as_tuple()) for t in triples],
    }
    _emit_json(out, args.out)
    return 0


def cmd_fuse_bench(args) -> int:
    lengths = (args.lt, args.ls, args.ln if args.rendered else args.lf, args.ln)
    cost = {"lengths": list(lengths), **attention_cost(lengths)}
    if args.pretty:
        lines = [f"{k:>28}: {v}" for k, v in cost.items()]
        _emit("\n".join(lines), args.out)
    else:
        _emit_json(cost, args.out)
    return 0


def _merge_curation_summaries(parts: list) -> dict:
    total = {"records_in": 0, "malformed": 0, "quarantined": 0, "passed_all": 0,
             "stages": {}}
    for part in parts:
        for key in ("records_in", "malformed", "quarantined", "passed_all"):
            total[key] += part[key]
        for stage, row in part["stages"].items():
            slot = total["stages"].setdefault(stage, {"evaluated": 0, "passed": 0})
            slot["evaluated"] += row["evaluated"]
            slot["passed"] += row["passed"]
    for row in total["stages"].values():
        row["rate"] = row["passed"] / row["evaluated"] if row["evaluated"] else 0.0
    return total


def cmd_curate(args) -> int:
    if args.jobs < 1:
        raise SchemaError(f"--jobs must be >= 1, got {args.jobs}")
    cfg = _load_curation_config(args.config)
    scorers = _curation_scorers(args.scorers, args.seed)
    lines = _read_text(args.in_path).splitlines()
    if args.jobs == 1 or len(lines) < 2:
        buf = StringIO()
        summary = curation.curate(lines, cfg, scorers, buf)
        chunks = [buf.getvalue()]
        parts = [summary]
    else:
        # records are independent; contiguous chunks keep output order stable
        bounds = np.linspace(0, len(lines), args.jobs + 1).astype(int)
        pieces = [lines[a:b] for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        bufs = [StringIO() for _ in pieces]
        with ThreadPoolExecutor(max_workers=len(pieces)) as pool:
            parts = list(pool.map(
                lambda pb: curation.curate(pb[0], cfg, scorers, pb[1]),
                zip(pieces, bufs),
            ))
        chunks = [b.getvalue() for b in bufs]
        summary = _merge_curation_summaries(parts)
    with open(args.out, "w") as fh:
        for chunk in chunks:
            fh.write(chunk)
    _emit_json(summary, None)
    return 0


def cmd_score_ip(args) -> int:
    inp = IpInputs(s_arc=args.sarc, phi_ins=args.phi_ins, phi_real=args.phi_real,
                   alpha=args.alpha, eps=args.eps)
    p = rip_penalty(inp)
    s_rip = rectified_ip(inp)
    if args.pretty:
        _emit(f"p = {p:.4f}\ns_rip = {s_rip:.4f}", args.out)
    else:
        _emit_json({"p": p, "s_rip": s_rip}, args.out)
    return 0


def cmd_eval(args) -> int:
    scorers = _eval_scorers(args.scorers, args.seed)
    lines = _read_text(args.in_path).splitlines()
    report = evaluate(lines, scorers)
    _emit_json(report.to_json_obj(), args.out)
    return 0


def cmd_overlay(args) -> int:
    img = read_pgm(args.image).copy()
    f = parse_landmarks(_read_text(args.landmarks))
    h, w = img.shape
    cw, ch = f.canvas
    for x, y in f.points:
        # landmark canvas and raster size may differ; map proportionally
        cx = int(round(x * w / cw))
        cy = int(round(y * h / ch))
        x0, x1 = max(0, cx - args.radius), min(w, cx + args.radius + 1)
        y0, y1 = max(0, cy - args.radius), min(h, cy + args.radius + 1)
        if x0 < x1 and y0 < y1:
            img[y0:y1, x0:x1] = args.value
    write_pgm(args.out, img)
    return 0


def _add_seed(p):
    p.add_argument("--seed", type=int, default=DEFAULT_SEED,
                   help="deterministic seed (default %(default)s)")


def build_parser() -> _Parser:
    parser = _Parser(prog="lato", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="log progress to stderr (-vv for debug)")
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="COMMAND")

    p = sub.add_parser("train-tokenizer", help="train a VQ landmark tokenizer")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--data", help="JSONL file of landmark sets (one JSON object per line)")
    p.add_argument("--synthetic", type=int, default=10000,
                   help="when --data is absent, synthesize this many sets")
    p.add_argument("--canvas", type=int, nargs=2, default=(512, 512),
                   metavar=("W", "H"), help="canvas for --data landmark files")
    p.add_argument("--m", type=int, default=256, help="codebook size")
    p.add_argument("--d", type=int, default=64, help="code dimension")
    p.add_argument("--blocks", type=int, default=4, help="encoder/decoder blocks")
    p.add_argument("--batch", type=int, default=32, help="batch size")
    p.add_argument("--steps", type=int, default=12000, help="training steps")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    p.add_argument("--beta", type=float, default=0.25, help="commitment weight")
    _add_seed(p)
    p.set_defaults(func=cmd_train_tokenizer)

    p = sub.add_parser("tokenize", help="landmarks -> codebook indices")
    p.add_argument("--model", required=True, help="trained model file")
    p.add_argument("--landmarks", required=True, help="landmark JSON file")
    p.add_argument("--out", help="output JSON path (default stdout)")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("detokenize", help="codebook indices -> landmarks")
    p.add_argument("--model", required=True, help="trained model file")
    p.add_argument("--tokens", required=True, help='JSON file with an "indices" array')
    p.add_argument("--out", help="output JSON path (default stdout)")
    p.set_defaults(func=cmd_detokenize)

    p = sub.add_parser("predict", help="apply an edit instruction to landmarks")
    p.add_argument("--landmarks", required=True, help="source landmark JSON file")
    p.add_argument("--instruction", required=True, help="edit instruction text")
    p.add_argument("--out", help="predicted landmark JSON path (default stdout)")
    p.add_argument("--trace", help="also write the reasoning trace JSON here")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("posenc", help="landmark grid positions at a given stride")
    p.add_argument("--landmarks", required=True, help="landmark JSON file")
    p.add_argument("--stride", type=int, default=16, help="latent cell size in px")
    p.add_argument("--out", help="output JSON path (default stdout)")
    p.set_defaults(func=cmd_posenc)

    p = sub.add_parser("fuse-bench", help="attention cost accounting for a token layout")
    p.add_argument("--lt", type=int, default=77, help="text tokens")
    p.add_argument("--ls", type=int, default=1024, help="source image tokens")
    p.add_argument("--lf", type=int, default=68, help="facial landmark tokens")
    p.add_argument("--ln", type=int, default=1024, help="noisy image tokens")
    p.add_argument("--rendered", action="store_true",
                   help="cost the rendered-condition layout (landmarks as a dense image)")
    p.add_argument("--pretty", action="store_true", help="aligned table instead of JSON")
    p.add_argument("--out", help="output path (default stdout)")
    p.set_defaults(func=cmd_fuse_bench)

    p = sub.add_parser("curate", help="run the curation filter chain over JSONL pairs")
    p.add_argument("--in", dest="in_path", required=True, help="input JSONL")
    p.add_argument("--out", required=True, help="curated JSONL to write")
    p.add_argument("--config", help="curation config JSON (falls back to $LATO_CONFIG)")
    p.add_argument("--scorers", default="mock", help="mock or http:URL (default mock)")
    p.add_argument("--jobs", type=int, default=1, help="parallel chunks (default 1)")
    _add_seed(p)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("score-ip", help="rectified identity-preservation score")
    p.add_argument("--sarc", type=float, required=True, help="identity similarity in [0, 1]")
    p.add_argument("--phi-ins", type=float, required=True, help="instructed amplitude")
    p.add_argument("--phi-real", type=float, required=True, help="realized amplitude")
    p.add_argument("--alpha", type=float, default=2.0, help="penalty exponent")
    p.add_argument("--eps", type=float, default=1e-5, help="denominator stabilizer")
    p.add_argument("--pretty", action="store_true", help="plain text instead of JSON")
    p.add_argument("--out", help="output path (default stdout)")
    p.set_defaults(func=cmd_score_ip)

    p = sub.add_parser("eval", help="score a JSONL result manifest into a report")
    p.add_argument("--in", dest="in_path", required=True, help="results JSONL")
    p.add_argument("--out", help="report JSON path (default stdout)")
    p.add_argument("--scorers", default="mock", help="mock or http:URL (default mock)")
    _add_seed(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("overlay", help="draw landmark dots onto a PGM image")
    p.add_argument("--image", required=True, help="input PGM")
    p.add_argument("--landmarks", required=True, help="landmark JSON file")
    p.add_argument("--out", required=True, help="output PGM")
    p.add_argument("--radius", type=int, default=1, help="dot radius in px")
    p.add_argument("--value", type=int, default=255, help="dot intensity 0..255")
    p.set_defaults(func=cmd_overlay)

    return parser


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _CliUsage as e:
        sys.stderr.write(parser.format_usage())
        sys.stderr.write(f"lato: error: {e}\n")
        return 1
    except SystemExit as e:  # --help prints and exits
        return 0 if e.code in (0, None) else 1
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(message)s")
    cfg = CliConfig(
        subcommand=args.subcommand,
        in_path=getattr(args, "in_path", None) or getattr(args, "landmarks", None),
        out_path=getattr(args, "out", None),
        config_path=getattr(args, "config", None),
        seed=getattr(args, "seed", DEFAULT_SEED),
        verbosity=args.verbose,
    )
    log.debug("dispatch %s", cfg)
    try:
        return args.func(args)
    except OSError as e:
        sys.stderr.write(f"lato: io error: {e}\n")
        return 2
    except json.JSONDecodeError as e:
        sys.stderr.write(f"lato: error: invalid JSON input: {e}\n")
        return 1
    except LatoError as e:
        sys.stderr.write(f"lato: error: {e}\n")
        return 1


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
