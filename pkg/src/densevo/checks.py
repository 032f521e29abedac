"""Central finite-difference gradient verification.

Used by the self-test suites and the unit tests to confirm that autograd
gradients of every learnable stage match an independent numerical
differentiation of the same forward function.  Checks run in 64-bit only;
32-bit rounding would swamp the tolerances.
"""

from __future__ import annotations

import numpy as np
import torch

__all__ = [
    "DEFAULT_STEP",
    "DEFAULT_TOLERANCE",
    "central_difference_gradients",
    "relative_gradient_error",
    "randomize_parameters",
]

DEFAULT_STEP = 1e-6
DEFAULT_TOLERANCE = 1e-4


def central_difference_gradients(fn, tensors, step=DEFAULT_STEP, samples_per_tensor=24, rng=None):
    """Compare autograd gradients of ``fn()`` against central differences.

    ``fn`` must rebuild the scalar (float64) output from scratch on every
    call, reading the current values of ``tensors`` (leaf tensors with
    ``requires_grad=True``).  For tensors with many entries only a random
    subsample of coordinates is probed.

    Returns ``(analytic, numeric)`` flat float64 arrays over the sampled
    coordinates.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    tensors = list(tensors)
    for t in tensors:
        if t.dtype != torch.float64:
            raise TypeError("gradient checks require float64 tensors")
    out = fn()
    if out.dtype != torch.float64:
        raise TypeError("gradient checks require a float64 objective")
    grads = torch.autograd.grad(out, tensors, allow_unused=True)

    analytic, numeric = [], []
    for tensor, grad in zip(tensors, grads):
        n = tensor.numel()
        count = min(samples_per_tensor, n)
        indices = rng.choice(n, size=count, replace=False)
        flat = tensor.detach().reshape(-1)
        grad_flat = None if grad is None else grad.reshape(-1)
        for i in indices:
            original = flat[i].item()
            with torch.no_grad():
                flat[i] = original + step
            f_plus = float(fn().detach())
            with torch.no_grad():
                flat[i] = original - step
            f_minus = float(fn().detach())
            with torch.no_grad():
                flat[i] = original
            numeric.append((f_plus - f_minus) / (2.0 * step))
            analytic.append(0.0 if grad_flat is None else float(grad_flat[i]))
    return np.asarray(analytic), np.asarray(numeric)


def relative_gradient_error(fn, tensors, step=DEFAULT_STEP, samples_per_tensor=24, rng=None):
    """Norm-relative disagreement between analytic and numeric gradients."""
    analytic, numeric = central_difference_gradients(
        fn, tensors, step=step, samples_per_tensor=samples_per_tensor, rng=rng
    )
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def randomize_parameters(module: torch.nn.Module, rng: np.random.Generator, scale: float = 0.25):
    """Overwrite all parameters with small random values.

    Gradient checks must run at a generic point: several heads are
    zero-initialized by design, which would make upstream gradients vanish
    identically and the check vacuous.
    """
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.from_numpy(rng.normal(scale=scale, size=tuple(p.shape))).to(p.dtype))
