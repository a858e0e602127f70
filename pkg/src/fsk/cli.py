"""Command-line entry point: ``fsk bench-pool | pipeline | selftest``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bench, dynpool
from .config import RunConfig, load_config
from .synth import frame_detector, gen_sequence, load_scene
from .temporal import FrameStats, SeedNoise, SequenceResult, run_sequence

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(d) for d in text.split(",") if d)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dim list {text!r}")
    if not dims or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError("dims must be positive integers")
    return dims


def _regimes(text: str) -> tuple[tuple[int, int], ...]:
    out = []
    for part in text.split(","):
        try:
            lo, hi = (int(v) for v in part.split("-"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad regime {part!r}, expected LO-HI")
        if lo < 1 or hi <= lo:
            raise argparse.ArgumentTypeError(f"invalid regime {part!r}")
        out.append((lo, hi))
    return tuple(out)


def _prob(text: str) -> float:
    try:
        p = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not 0 <= p <= 1:
        raise argparse.ArgumentTypeError("probability must lie in [0, 1]")
    return p


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _nonneg(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fsk", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench-pool", help="time optimized vs naive dynamic pooling")
    b.add_argument("--dims", type=_dims, default=bench.PAPER_DIMS)
    b.add_argument("--regimes", type=_regimes, default=bench.PAPER_REGIMES)
    b.add_argument("--imbalanced", choices=("on", "off", "both"), default="both")
    b.add_argument("--reps", type=_positive, default=20)
    b.add_argument("--warmup", type=_nonneg, default=3)
    b.add_argument("--min-reps", type=_positive, default=3)
    b.add_argument("--time-budget", type=float, default=None,
                   help="seconds per backend and cell after which timing stops (at least --min-reps)")
    b.add_argument("--threads", type=_positive, default=None, help="defaults to $FSK_THREADS or 1")
    b.add_argument("--chunk-size", type=_positive, default=dynpool.DEFAULT_CHUNK)
    b.add_argument("--kind", choices=dynpool.KINDS, default="max")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", type=Path, default=None)
    b.add_argument("--break-equivalence", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("pipeline", help="run the detector over a synthetic sequence")
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--mode", choices=("fsd", "fsdpp"), default="fsdpp")
    p.add_argument("--frames", type=_nonneg, default=10)
    p.add_argument("--keyframe-gap", type=_positive, default=None)
    p.add_argument("--drop", type=_prob, default=0.0)
    p.add_argument("--insert", type=_prob, default=0.0)
    p.add_argument("--detector", choices=("oracle", "fsd"), default="oracle")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--out", type=Path, required=True)

    sub.add_parser("selftest", help="run the invariant suite at reduced sizes")
    return ap


# -- bench-pool -------------------------------------------------------------------

def cmd_bench_pool(args) -> int:
    balance = {"on": (False,), "off": (True,), "both": (True, False)}[args.imbalanced]
    spec = bench.BenchSpec(dims=args.dims, regimes=args.regimes, balance=balance, reps=args.reps,
                           warmup=args.warmup, min_reps=min(args.min_reps, args.reps),
                           time_budget=args.time_budget,
                           threads=args.threads or dynpool.default_threads(),
                           chunk_size=args.chunk_size, kind=args.kind, seed=args.seed,
                           break_equivalence=args.break_equivalence)

    def progress(cell):
        r = cell[1]
        print(f"dim={r['dim']} regime={r['regime_lo']}-{r['regime_hi']} balanced={r['balanced']} "
              f"speedup={r['speedup']:.2f}", file=sys.stderr, flush=True)

    try:
        rows = bench.bench_grid(spec, progress)
    except bench.EquivalenceError as e:
        print(f"equivalence gate failed: {e}", file=sys.stderr)
        return EXIT_FAIL
    text = bench.rows_to_csv(rows)
    if args.out is None:
        sys.stdout.write(text)
    else:
        try:
            args.out.write_text(text)
        except OSError as e:
            print(f"cannot write {args.out}: {e}", file=sys.stderr)
            return EXIT_USAGE
    return EXIT_OK


# -- pipeline -----------------------------------------------------------------------

def _fsd_detector(frames, cfg: RunConfig):
    from .sir.model import FSDModel, FSDParams

    fcfg = cfg.fsd_config()
    model = FSDModel(FSDParams.init(fcfg, cfg.seed), fcfg)

    def detect(points, t):
        return model.detect(points, oracle_gts=frames[t].boxes)
    return detect


def prediction_line(frame: int, preds) -> str:
    boxes = [[float(v) for v in p.box.as_array()] for p in preds]
    return json.dumps({"frame": frame, "boxes": boxes, "scores": [float(p.score) for p in preds]})


def run_pipeline(spec, cfg: RunConfig, *, mode: str, num_frames: int, keyframe_gap=None,
                 drop: float = 0.0, insert: float = 0.0, detector: str = "oracle") -> SequenceResult:
    frames = gen_sequence(spec, num_frames)
    if detector == "oracle":
        det = frame_detector(frames, min_points=cfg.detector_min_points)
    else:
        det = _fsd_detector(frames, cfg)
    if mode == "fsdpp":
        return run_sequence([f.points for f in frames], [f.pose for f in frames], det, cfg.rpp,
                            keyframe_gap=keyframe_gap, noise=SeedNoise(drop, insert, cfg.seed),
                            strategy=cfg.skeleton_strategy, budget_per_box=cfg.budget_per_box,
                            seed=cfg.seed)
    out = SequenceResult()
    for t, f in enumerate(frames):
        t0 = time.perf_counter()
        preds = det(f.points, t)
        ms = (time.perf_counter() - t0) * 1e3
        n = len(f.points)
        out.predictions.append(preds)
        out.inputs.append(n)
        out.stats.append(FrameStats(t, n, n, 0, 1.0 if n else 0.0, len(preds), ms))
    return out


def cmd_pipeline(args) -> int:
    try:
        spec = load_scene(args.scene)
        cfg = load_config(args.config) if args.config else RunConfig()
    except FileNotFoundError as e:
        print(f"file not found: {e.filename}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, TypeError, KeyError) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None:
        cfg = RunConfig.from_dict(dict(cfg.to_dict(), seed=args.seed))
    res = run_pipeline(spec, cfg, mode=args.mode, num_frames=args.frames, keyframe_gap=args.keyframe_gap,
                       drop=args.drop, insert=args.insert, detector=args.detector)
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        with open(args.out / "predictions.jsonl", "w") as f:
            for t, preds in enumerate(res.predictions):
                f.write(prediction_line(t, preds) + "\n")
        (args.out / "stats.csv").write_text(res.stats_csv())
    except OSError as e:
        print(f"cannot write outputs: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


# -- selftest ---------------------------------------------------------------------

def _st_pool():
    from .core import GroupIndex
    from .oracles import pool_loop

    rng = np.random.default_rng(0)
    for _ in range(40):
        n = int(rng.integers(0, 3000))
        m = int(rng.integers(1, 60))
        c = int(rng.choice([1, 8, 64]))
        ids = rng.integers(-1, m, n)
        F = rng.standard_normal((n, c))
        idx = GroupIndex(ids, m)
        pl = dynpool.plan(idx, int(rng.integers(1, 300)))
        for kind in dynpool.KINDS:
            got = dynpool.pool(F, pl, kind, threads=int(rng.integers(1, 4))).values
            ref = dynpool.pool_naive(F, idx, kind).values
            if kind == "max":
                assert np.array_equal(got, ref), "max pooling differs from the scatter backend"
                assert np.array_equal(got, pool_loop(F, ids, m, kind)), "max pooling differs from the loop oracle"
            else:
                assert np.allclose(got, ref, rtol=1e-6, atol=1e-12), "avg pooling differs from the scatter backend"


def _st_ccl():
    from .grouping import ccl_group
    from .oracles import bfs_components, same_partition

    rng = np.random.default_rng(1)
    for _ in range(30):
        k = int(rng.integers(1, 400))
        pts = rng.uniform(0, float(rng.uniform(1, 10)), (k, 3))
        assert same_partition(ccl_group(pts, 0.6).ids, bfs_components(pts, 0.6)), "CCL partition differs from BFS"
    chain = np.array([[0.5 * i, 0, 0] for i in range(20)])
    assert ccl_group(chain, 0.6).num_groups == 1, "chain fixture is not a single component"


def _st_grad():
    from .gradcheck import check_model
    from .sir.model import FSDConfig, FSDModel, FSDParams
    from .synth import gen_frame, make_scene

    spec = make_scene(1, n_objects=3, n_background=15, extent=8, points_per_object=15, min_gap=2)
    fr = gen_frame(spec, 0)
    cfg = FSDConfig(encoder_width=4, sir_widths=(4, 4, 4), sir2_widths=(4, 4), head_hidden=4)
    model = FSDModel(FSDParams.init(cfg, 0), cfg)
    aux = model.make_aux(fr.points, fr.boxes, group_with="gt")
    rep = check_model(model, fr.points, fr.boxes, aux)
    assert rep.ok, f"gradient check: rel error {rep.max_rel_error:.2e} at {rep.worst_param}{rep.worst_index}"


def _st_labels():
    from .core import Box3D, box_iou_3d
    from .losses import bce_with_logits, focal_loss, soft_iou_label

    assert [soft_iou_label(v) for v in (0.25, 0.5, 0.75)] == [0.0, 0.5, 1.0], "soft label spot values"
    z = np.linspace(-4, 4, 17)
    y = (np.arange(17) % 2).astype(float)
    w = np.where(y > 0, 0.25, 0.75)
    bce = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    assert abs(focal_loss(z, y, 0.25, 0.0) - float((w * bce).mean())) < 1e-10, "focal(gamma=0) != weighted BCE"
    assert bce_with_logits(np.zeros(2), np.array([0.0, 1.0])) == np.log(2), "BCE at zero logit"
    iou = box_iou_3d(Box3D((0, 0, 0), (2, 2, 2), 0), Box3D((1, 0, 0), (2, 2, 2), 0))
    assert abs(iou - 1 / 3) < 1e-9, "offset cube IoU"


SELFTESTS = (("pool-equivalence", _st_pool), ("ccl-vs-bfs", _st_ccl),
             ("gradient-check", _st_grad), ("loss-spot-values", _st_labels))


def cmd_selftest(args=None) -> int:
    failed = False
    for name, fn in SELFTESTS:
        try:
            fn()
        except AssertionError as e:
            print(f"FAIL {name}: {e}")
            failed = True
        else:
            print(f"PASS {name}")
    return EXIT_FAIL if failed else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"bench-pool": cmd_bench_pool, "pipeline": cmd_pipeline, "selftest": cmd_selftest}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
