"""Command-line interface: train, evaluate, infer, plot, selftest.

Exit code 0 on success, 1 on runtime failure (including selftest failures),
2 on bad usage.  The dataset root inside a config can be overridden with the
``DENSEVO_DATA_ROOT`` environment variable.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .evalkit import flow_to_color, plot_trajectory, read_kitti_trajectory

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="densevo",
        description="Dense-depth-guided LiDAR-visual odometry",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train on the configured dataset")
    p_train.add_argument("--config", required=True, type=Path)
    p_train.add_argument("--output-dir", type=Path, default=None)

    p_eval = sub.add_parser("evaluate", help="evaluate a checkpoint over sequences")
    p_eval.add_argument("--config", required=True, type=Path)
    p_eval.add_argument("--checkpoint", required=True, type=Path)
    p_eval.add_argument("--sequences", default=None, help="comma-separated ids, e.g. 09,10")
    p_eval.add_argument("--output-dir", type=Path, default=None)

    p_infer = sub.add_parser("infer", help="relative pose for one image pair")
    p_infer.add_argument("--pair", nargs=2, required=True, metavar=("A", "B"), type=Path)
    p_infer.add_argument("--depth-a", type=Path, default=None, help="16-bit depth PNG for frame A")
    p_infer.add_argument("--depth-b", type=Path, default=None, help="16-bit depth PNG for frame B")
    p_infer.add_argument("--config", type=Path, default=None)
    p_infer.add_argument("--checkpoint", type=Path, default=None)
    p_infer.add_argument("--flow-out", type=Path, default=None, help="write flow (.npy) + color (.png)")

    p_plot = sub.add_parser("plot", help="render a saved flow field or trajectories")
    group = p_plot.add_mutually_exclusive_group(required=True)
    group.add_argument("--flow", type=Path, help="(2, H, W) .npy flow field")
    group.add_argument("--trajectory", nargs="+", type=Path, help="GT file then prediction files")
    p_plot.add_argument("--out", required=True, type=Path)
    p_plot.add_argument("--max-magnitude", type=float, default=None)

    p_self = sub.add_parser("selftest", help="run the built-in oracle suites")
    p_self.add_argument("--seed", type=int, default=0)

    return parser


def _cmd_train(args) -> int:
    from .train import run_training

    config = load_config(args.config)
    result = run_training(config, output_dir=args.output_dir)
    print(f"trained {result.iterations} iterations; final loss {result.final_loss:.6e}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"loss log:   {result.log_path}")
    return 0


def _cmd_evaluate(args) -> int:
    from .evaluate import run_evaluation

    config = load_config(args.config)
    sequences = args.sequences.split(",") if args.sequences else None
    result = run_evaluation(config, args.checkpoint, sequences=sequences, output_dir=args.output_dir)
    for seq in result.sequences:
        if seq.status == "ok":
            print(f"{seq.sequence}: t_rel {seq.t_rel:.4f} %  r_rel {seq.r_rel:.4f} deg/100m")
        else:
            print(f"{seq.sequence}: {seq.status}")
    print(f"results: {result.results_path}")
    return 0


def _load_inference_frame(path: Path):
    from PIL import Image

    rgb = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64).transpose(2, 0, 1) / 255.0
    h, w = rgb.shape[1:]
    ch, cw = (h // 16) * 16, (w // 16) * 16
    if ch == 0 or cw == 0:
        raise ValueError(f"image {path} is smaller than 16x16")
    x0 = (w - cw) // 2
    return rgb[:, h - ch : h, x0 : x0 + cw]


def _cmd_infer(args) -> int:
    import torch

    from .checkpoint import load_checkpoint
    from .data.base import FramePair
    from .data.kitti import read_depth_png
    from .evaluate import predict_relative
    from .flow import DepthMap
    from .train import _depth_backend, build_loss, build_model, pair_inputs

    rgb_a = _load_inference_frame(args.pair[0])
    rgb_b = _load_inference_frame(args.pair[1])
    if rgb_a.shape != rgb_b.shape:
        raise ValueError("the two frames must share a resolution")
    h, w = rgb_a.shape[1:]

    def load_depth(path):
        if path is None:
            return DepthMap.empty(h, w)
        dm = read_depth_png(path)
        if dm.shape != (h, w):
            raise ValueError(f"depth {dm.shape} does not match the cropped frames {(h, w)}")
        return dm

    have_depth = args.depth_a is not None
    if args.config is not None:
        config = load_config(args.config)
    else:
        # bare invocation: complete provided sparse depth, or run RGB-only
        from .config import ModelConfig

        config = RunConfig(
            model=ModelConfig(input_mode="rgbd_dense" if have_depth else "rgb_only"),
            depth_backend="classical" if have_depth else "none",
        )
    pair = FramePair(
        rgb_a=rgb_a,
        rgb_b=rgb_b,
        sparse_depth_a=load_depth(args.depth_a),
        sparse_depth_b=load_depth(args.depth_b),
        intrinsics=_default_intrinsics(h, w),
    )

    model = build_model(config)
    loss_module = build_loss(config)
    if args.checkpoint is not None:
        load_checkpoint(args.checkpoint, model, loss_module, config)
    else:
        print("note: no checkpoint given; using an untrained network", file=sys.stderr)
    model.eval()
    backend = _depth_backend(config)
    tensors = pair_inputs(pair, config, backend)
    pose = predict_relative(model, tensors)
    t, q = pose.t, pose.q
    print(f"translation [m]: {t[0]:.6f} {t[1]:.6f} {t[2]:.6f}")
    print(f"quaternion wxyz: {q[0]:.6f} {q[1]:.6f} {q[2]:.6f} {q[3]:.6f}")

    if args.flow_out is not None:
        from .flow import upsample_flow

        with torch.no_grad():
            out = model(*tensors)
        flow = out.flows[-1]  # finest level, half input resolution
        flow = upsample_flow(flow)[0].numpy()
        np.save(args.flow_out.with_suffix(".npy"), flow.astype(np.float32))
        from PIL import Image

        Image.fromarray(flow_to_color(flow)).save(args.flow_out.with_suffix(".png"))
        print(f"flow: {args.flow_out.with_suffix('.npy')} / {args.flow_out.with_suffix('.png')}")
    return 0


def _default_intrinsics(h: int, w: int):
    from .data.base import CameraIntrinsics

    return CameraIntrinsics(
        fx=0.8 * w, fy=0.8 * w, cx=(w - 1) / 2, cy=(h - 1) / 2, width=w, height=h
    )


def _cmd_plot(args) -> int:
    if args.flow is not None:
        from PIL import Image

        flow = np.load(args.flow)
        if flow.ndim != 3 or flow.shape[0] != 2:
            raise ValueError(f"expected a (2, H, W) flow field, got {flow.shape}")
        Image.fromarray(flow_to_color(flow, args.max_magnitude)).save(args.out)
        print(f"wrote {args.out}")
        return 0
    if len(args.trajectory) < 2:
        raise ValueError("plot --trajectory needs a ground-truth file and at least one prediction")
    gt = read_kitti_trajectory(args.trajectory[0])
    preds = [(p.stem, read_kitti_trajectory(p)) for p in args.trajectory[1:]]
    img, table = plot_trajectory(gt, preds, args.out)
    print(f"wrote {img} and {table}")
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    report = run_selftest(args.seed)
    print(report.table())
    return 0 if report.all_passed else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "evaluate": _cmd_evaluate,
        "infer": _cmd_infer,
        "plot": _cmd_plot,
        "selftest": _cmd_selftest,
    }
    try:
        return handlers[args.command](args)
    except Exception as exc:  # surface a one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
