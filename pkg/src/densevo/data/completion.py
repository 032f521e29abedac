"""Depth completion backends.

Dense depth is consumed through a plug-in interface so a learned completion
engine can drop in without touching the pipeline:

* :class:`PrecomputedDepth` reads completed maps exported beforehand
  (16-bit PNG, meters = value / 256);
* :class:`ExternalCompletion` wraps any callable engine;
* :class:`ClassicalFill` is a dependency-free fallback: grey dilation,
  nearest-valid fill, then a small blur over the filled-in pixels.

Measured (valid) pixels always pass through a backend untouched except for
``ExternalCompletion``, whose engine owns its output.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from ..flow import DepthMap

__all__ = [
    "DepthCompletionError",
    "ClassicalFill",
    "PrecomputedDepth",
    "ExternalCompletion",
    "complete_depth",
    "make_backend",
]


class DepthCompletionError(RuntimeError):
    """The selected completion backend cannot produce a dense map."""


class ClassicalFill:
    """Dilation + nearest-valid fill + small-kernel blur on filled pixels."""

    def __init__(self, dilation_size: int = 5, blur_size: int = 3):
        self.dilation_size = int(dilation_size)
        self.blur_size = int(blur_size)

    def complete(self, sparse: DepthMap, rgb=None, frame_index: int | None = None) -> DepthMap:
        if not sparse.valid.any():
            raise DepthCompletionError("cannot complete a depth map with no valid pixels")
        depth = sparse.depth.copy()
        valid = sparse.valid.copy()

        if self.dilation_size > 1:
            # max-dilation over valid pixels fills small gaps between returns
            dilated = ndimage.grey_dilation(
                np.where(valid, depth, -np.inf), size=self.dilation_size
            )
            grown = np.isfinite(dilated) & ~valid
            depth[grown] = dilated[grown]
            valid |= grown

        if not valid.all():
            _, (iy, ix) = ndimage.distance_transform_edt(~valid, return_indices=True)
            depth = depth[iy, ix]

        if self.blur_size > 1:
            blurred = ndimage.uniform_filter(depth, size=self.blur_size, mode="nearest")
            depth = np.where(sparse.valid, sparse.depth, blurred)
        return DepthMap.dense(np.maximum(depth, 1e-6))


class PrecomputedDepth:
    """Loads completed maps exported as ``<frame index>.png`` in one directory."""

    def __init__(self, directory):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise DepthCompletionError(f"precomputed depth directory missing: {self.directory}")

    def complete(self, sparse: DepthMap, rgb=None, frame_index: int | None = None) -> DepthMap:
        if frame_index is None:
            raise DepthCompletionError("precomputed backend needs the frame index")
        from .kitti import read_depth_png

        path = self.directory / f"{frame_index:06d}.png"
        if not path.is_file():
            raise DepthCompletionError(f"no precomputed depth for frame {frame_index}: {path}")
        loaded = read_depth_png(path)
        if loaded.shape != sparse.shape:
            raise DepthCompletionError(
                f"precomputed depth {loaded.shape} does not match frame {sparse.shape}"
            )
        if not loaded.valid.all():
            raise DepthCompletionError(f"precomputed map {path} is not dense")
        return loaded


class ExternalCompletion:
    """Adapter for a learned completion engine.

    The engine is any callable ``(depth HxW, valid HxW, rgb 3xHxW) -> dense
    depth HxW``; its output must be finite and strictly positive.
    """

    def __init__(self, engine):
        if not callable(engine):
            raise DepthCompletionError("external completion engine must be callable")
        self.engine = engine

    def complete(self, sparse: DepthMap, rgb=None, frame_index: int | None = None) -> DepthMap:
        out = np.asarray(self.engine(sparse.depth, sparse.valid, rgb), dtype=np.float64)
        if out.shape != sparse.shape:
            raise DepthCompletionError(
                f"engine returned {out.shape}, expected {sparse.shape}"
            )
        if not np.all(np.isfinite(out)) or np.any(out <= 0):
            raise DepthCompletionError("engine output must be finite and positive")
        return DepthMap.dense(out)


def complete_depth(sparse: DepthMap, rgb, backend, frame_index: int | None = None) -> DepthMap:
    """Run one completion backend; the result is dense (valid everywhere)."""
    if backend is None or not hasattr(backend, "complete"):
        raise DepthCompletionError(f"not a completion backend: {backend!r}")
    dense = backend.complete(sparse, rgb=rgb, frame_index=frame_index)
    if not dense.valid.all():
        raise DepthCompletionError("backend returned a non-dense depth map")
    return dense


def make_backend(name: str, **kwargs):
    """Construct a backend from its config name."""
    if name == "classical":
        return ClassicalFill(**kwargs)
    if name == "precomputed":
        return PrecomputedDepth(**kwargs)
    if name == "external":
        return ExternalCompletion(**kwargs)
    raise DepthCompletionError(f"unknown depth completion backend: {name!r}")
