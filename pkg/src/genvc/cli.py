"""Command-line entry points: `genvc` (train / encode / decode / eval /
predicts / study tools / make-data) and `dssw-bench` (resampling-kernel
spectral benchmark)."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="genvc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="generate synthetic moving-texture clips")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=16)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--frames", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train stage 1 (I-branch) or stage 2 (P-branch)")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--config", help="YAML codec config (defaults used if omitted)")
    p.add_argument("--data", required=True, help="dataset directory of clip folders")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--init", help="input checkpoint (required for stage 2)")
    p.add_argument("--scale", type=float, default=0.01, help="schedule scale factor")
    p.add_argument("--steps", type=int, help="override the scaled step budget")
    p.add_argument("--target-bpp", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("encode", help="encode a clip folder to a .gvc file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--frames", required=True, help="directory of numbered PNGs")
    p.add_argument("--out", required=True)

    p = sub.add_parser("decode", help="decode a .gvc file to PNG frames")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="objective metrics over exported reconstructions")
    p.add_argument("--recons", required=True, help="one method folder: <method>/<video>/")
    p.add_argument("--originals", required=True, help="originals folder: <video>/")
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.add_argument("--bpp-json", help="optional JSON mapping video id -> bpp")
    p.add_argument("--patch-size", type=int, default=256)

    p = sub.add_parser("predicts", help="metric-vs-study prediction labels")
    p.add_argument("--metrics", required=True, help="metrics CSV with two methods")
    p.add_argument("--study", required=True, help="study CSV (wins per video)")
    p.add_argument("--left", default="Ours",
                   help="metrics-CSV method counted by the study's wins_left column")

    p = sub.add_parser("study-build", help="build a 2AFC study manifest")
    p.add_argument("--recons", required=True, help="root with <method>/<video>/ trees")
    p.add_argument("--originals", required=True)
    p.add_argument("--golden", required=True, help="root with golden_high/golden_low trees")
    p.add_argument("--left", default="Ours")
    p.add_argument("--right", required=True)
    p.add_argument("--videos", type=int, default=30)
    p.add_argument("--n-golden", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="manifest JSON path")

    p = sub.add_parser("study-serve", help="serve a built study over HTTP")
    p.add_argument("--manifest", required=True)
    p.add_argument("--log", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    p = sub.add_parser("study-export", help="aggregate a response log into the release CSV")
    p.add_argument("--log", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    return _COMMANDS[args.command](args)


def _cmd_make_data(args) -> int:
    from .data import save_clip_pngs, synthetic_dataset

    clips = synthetic_dataset(args.clips, size=args.size, n_frames=args.frames,
                              seed=args.seed)
    out = Path(args.out)
    for i, clip in enumerate(clips):
        save_clip_pngs(clip, out / f"clip_{i:04d}")
    print(f"wrote {len(clips)} clips under {out}")
    return 0


def _cmd_train(args) -> int:
    from .data import load_dataset_dir
    from .networks import CodecConfig, VideoCodec, load_checkpoint, save_checkpoint
    from .training import TrainOptions, UnrollSchedule, stage1_train, stage2_train

    clips = load_dataset_dir(args.data)
    opts = TrainOptions(batch_size=args.batch_size, scale=args.scale,
                        target_bpp=args.target_bpp, seed=args.seed)
    if args.stage == 1:
        config = CodecConfig.from_yaml(args.config) if args.config else CodecConfig()
        torch.manual_seed(args.seed)
        model = VideoCodec(config)
        steps = args.steps or max(1, round(1_000_000 * args.scale))
        history = stage1_train(model, clips, steps, opts)
        save_checkpoint(args.out, model, {"stage": 1, "history_tail": history["bpp"][-10:]})
    else:
        if not args.init:
            print("stage 2 requires --init with a stage-1 checkpoint", file=sys.stderr)
            return 2
        model, _ = load_checkpoint(args.init)
        schedule = UnrollSchedule.scaled(args.scale)
        steps = args.steps or schedule.total_steps
        history = stage2_train(model, clips, steps, opts, schedule)
        save_checkpoint(args.out, model, {"stage": 2, "history_tail": history["bpp"][-10:]})
    print(f"saved checkpoint to {args.out}")
    return 0


def _cmd_encode(args) -> int:
    from .codec import encode_frames
    from .data import load_clip_dir
    from .networks import load_checkpoint

    model, _ = load_checkpoint(args.ckpt)
    clip = load_clip_dir(args.frames)
    data, report = encode_frames(model, clip.frames, clip.flows)
    Path(args.out).write_bytes(data)
    print(f"{len(clip)} frames -> {len(data)} bytes "
          f"(bpp {report.bpp_coded:.4f}, model estimate {report.bpp_estimate:.4f})")
    return 0


def _cmd_decode(args) -> int:
    from .data import Clip, save_clip_pngs
    from .codec import decode_frames
    from .networks import load_checkpoint

    model, _ = load_checkpoint(args.ckpt)
    frames = decode_frames(model, Path(args.input).read_bytes())
    save_clip_pngs(Clip(frames), args.out)
    print(f"decoded {frames.shape[0]} frames into {args.out}")
    return 0


def _cmd_eval(args) -> int:
    from .evalharness import load_recons, metrics, write_metrics_csv

    method_dir = Path(args.recons)
    recons = load_recons(method_dir)
    originals = load_recons(Path(args.originals))
    bpps = json.loads(Path(args.bpp_json).read_text()) if args.bpp_json else {}
    rows = []
    for video, frames in sorted(recons.items()):
        if video not in originals:
            print(f"skipping {video}: no originals", file=sys.stderr)
            continue
        result = metrics(frames, originals[video], patch_size=args.patch_size)
        rows.append({
            "video": video, "method": method_dir.name,
            "bpp": bpps.get(video, ""),
            "psnr": round(result.psnr, 4), "msssim": round(result.msssim, 6),
            "fid256": round(result.fid256, 4),
        })
    write_metrics_csv(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _cmd_predicts(args) -> int:
    import csv

    from .evalharness import predicts_label

    with open(args.metrics) as f:
        metric_rows = list(csv.DictReader(f))
    methods = sorted({r["method"] for r in metric_rows})
    if len(methods) != 2:
        print(f"need exactly 2 methods in the metrics CSV, got {methods}", file=sys.stderr)
        return 2
    if args.left not in methods:
        print(f"--left {args.left!r} not among metrics methods {methods}", file=sys.stderr)
        return 2
    left = args.left
    right = next(m for m in methods if m != left)
    methods = [left, right]

    with open(args.study) as f:
        study_rows = list(csv.DictReader(f))
    wins_left = sum(int(r["wins_left"]) for r in study_rows)
    wins_right = sum(int(r["wins_right"]) for r in study_rows)
    preferred = left if wins_left >= wins_right else right

    directions = {"psnr": True, "msssim": True, "fid256": False}
    means = {
        m: {k: np.mean([float(r[k]) for r in metric_rows if r["method"] == m and r[k] != ""])
            for k in directions}
        for m in methods
    }
    print(f"study preference: {preferred} ({wins_left} vs {wins_right} wins)")
    for metric, higher_better in directions.items():
        label = predicts_label(means[methods[0]][metric], means[methods[1]][metric],
                               higher_better, preferred == methods[0])
        print(f"{metric:8s} {methods[0]}={means[methods[0]][metric]:.4f} "
              f"{methods[1]}={means[methods[1]][metric]:.4f} predicts: {label}")
    return 0


def _cmd_study_build(args) -> int:
    from .study import StudyConfig, build_study, save_manifest

    config = StudyConfig(
        method_left=args.left, method_right=args.right,
        videos=tuple(f"{i:02d}" for i in range(1, args.videos + 1)),
        n_golden=args.n_golden,
        seed=args.seed,
    )
    manifest = build_study(config, args.recons, args.originals, args.golden)
    save_manifest(manifest, args.out)
    print(f"manifest with {len(manifest.comparisons)} comparisons -> {args.out}")
    return 0


def _cmd_study_serve(args) -> int:
    import uvicorn

    from .server import create_app
    from .study import ResponseLog, load_manifest

    app = create_app(load_manifest(args.manifest), ResponseLog(args.log))
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _cmd_study_export(args) -> int:
    from .study import ResponseLog, filter_and_aggregate, load_manifest, write_study_csv

    manifest = load_manifest(args.manifest)
    log = ResponseLog(args.log)
    qualified, rows = filter_and_aggregate(log, manifest)
    write_study_csv(rows, args.out)
    print(f"{len(qualified)} qualified raters; wrote {len(rows)} rows to {args.out}")
    return 0


_COMMANDS = {
    "make-data": _cmd_make_data,
    "train": _cmd_train,
    "encode": _cmd_encode,
    "decode": _cmd_decode,
    "eval": _cmd_eval,
    "predicts": _cmd_predicts,
    "study-build": _cmd_study_build,
    "study-serve": _cmd_study_serve,
    "study-export": _cmd_study_export,
}


def dssw_bench_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="dssw-bench",
        description="Spectral-energy retention of repeated sub-pixel warps.")
    parser.add_argument("--kernel", choices=("bilinear", "bicubic"), required=True)
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--shift", type=float, default=0.5)
    parser.add_argument("--image", required=True, help="8-bit PNG input")
    parser.add_argument("--out", help="CSV output path (default: stdout)")
    parser.add_argument("--time", action="store_true",
                        help="also report decoupled vs joint warp-blur CPU timings")
    args = parser.parse_args(argv)

    from PIL import Image

    from .dssw import spectral_retention, time_dssw_vs_ssw

    arr = np.asarray(Image.open(args.image).convert("RGB"), dtype=np.float64) / 255.0
    frame = torch.from_numpy(arr.transpose(2, 0, 1))
    retention = spectral_retention(frame, args.kernel, args.repeats, args.shift)
    lines = ["repeat,retention"] + [f"{i + 1},{r:.10e}" for i, r in enumerate(retention)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)

    if args.time:
        h, w = frame.shape[-2:]
        flow = torch.zeros(2, h, w, dtype=frame.dtype)
        flow[0] = args.shift
        sigma = torch.rand(h, w, dtype=frame.dtype) * 6.0
        timings = time_dssw_vs_ssw(frame, flow, sigma, args.kernel)
        print(f"dssw {timings['dssw'] * 1e3:.2f} ms/op vs joint "
              f"{timings['ssw_reference'] * 1e3:.2f} ms/op", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
