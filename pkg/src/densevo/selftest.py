"""Built-in oracle suites: pose algebra, cost volume, gradients, metrics.

Each suite re-derives expected values through an independent computation
(matrix products, brute-force loops, central finite differences, analytic
segment errors) and compares the production path against it.  A fault
injection check corrupts the cost-volume channel ordering on purpose and
verifies the oracle catches it, guarding the suite itself.

The report is deterministic for a fixed seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch

from . import geometry
from .checks import randomize_parameters, relative_gradient_error
from .costvol import CostFeatureEncoder, compute_cost_volume, normalize_features
from .evalkit import aggregate, segment_errors
from .flow import ContextNet, DepthModulation, FlowHead, estimate_flow
from .loss import ScaleAwarePoseLoss
from .posenet import PoseEstimate, ResidualPoseHead, fusion_weights, identity_pose_tensors
from .pyramid import ChannelAttention, CrossAttention, FeaturePyramid, SpatialAttention

__all__ = ["CheckResult", "SelftestReport", "run_selftest", "GRADIENT_TOLERANCE"]

GRADIENT_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass
class SelftestReport:
    results: list
    seed: int

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    def table(self) -> str:
        width = max(len(r.name) for r in self.results)
        lines = [f"selftest (seed {self.seed})"]
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            lines.append(f"  {r.name.ljust(width)}  {status}  {r.detail}")
        lines.append("overall: " + ("PASS" if self.all_passed else "FAIL"))
        return "\n".join(lines)


def _random_pose(rng) -> geometry.Pose:
    q = rng.normal(size=4)
    while np.linalg.norm(q) < 1e-3:
        q = rng.normal(size=4)
    return geometry.Pose(q, rng.uniform(-5, 5, size=3))


def _check_pose_algebra(rng) -> CheckResult:
    worst = 0.0
    for _ in range(1000):
        a, b = _random_pose(rng), _random_pose(rng)
        oracle = geometry.Pose.from_matrix(a.matrix() @ b.matrix())
        got = geometry.compose(a, b)
        dq = min(np.abs(got.q - oracle.q).max(), np.abs(got.q + oracle.q).max())
        worst = max(worst, dq, np.abs(got.t - oracle.t).max())
        back = geometry.compose(a, geometry.relative(a, b))
        worst = max(worst, np.abs(back.t - b.t).max())
    rels = [_random_pose(rng) for _ in range(20)]
    traj = geometry.accumulate(rels, _random_pose(rng))
    for i, rel in enumerate(rels):
        rec = geometry.relative(traj[i], traj[i + 1])
        dq = min(np.abs(rec.q - rel.q).max(), np.abs(rec.q + rel.q).max())
        worst = max(worst, dq, np.abs(rec.t - rel.t).max())
    passed = worst < 1e-9
    return CheckResult("pose_algebra", passed, f"max deviation {worst:.2e} (tol 1e-9)")


def _check_fusion_weights(rng) -> CheckResult:
    ests = [
        PoseEstimate(
            t=torch.from_numpy(rng.normal(size=3)),
            q=torch.tensor([1.0, 0, 0, 0], dtype=torch.float64),
            level=i,
            confidence_logit=torch.tensor(float(rng.normal()), dtype=torch.float64),
        )
        for i in range(4)
    ]
    err = abs(float(fusion_weights(ests).sum()) - 1.0)
    return CheckResult("fusion_weights", err < 1e-9, f"|sum - 1| = {err:.2e} (tol 1e-9)")


def _loop_cost_volume(f1: np.ndarray, f2: np.ndarray, radius: int) -> np.ndarray:
    c, h, w = f1.shape
    side = 2 * radius + 1
    out = np.zeros((side * side, h, w))
    for y in range(h):
        for x in range(w):
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w:
                        acc = 0.0
                        for ch in range(c):
                            acc += f1[ch, y, x] * f2[ch, yy, xx]
                        out[(dy + radius) * side + (dx + radius), y, x] = acc
    return out


def _cost_volume_max_error(rng, corrupt: bool = False) -> float:
    worst = 0.0
    for radius in (0, 2, 4):
        f1 = normalize_features(torch.from_numpy(rng.normal(size=(1, 4, 8, 8))))
        f2 = normalize_features(torch.from_numpy(rng.normal(size=(1, 4, 8, 8))))
        got = compute_cost_volume(f1, f2, radius)[0]
        if corrupt and radius > 0:
            got = got.flip(0)  # scrambled displacement channel ordering
        want = _loop_cost_volume(f1[0].numpy(), f2[0].numpy(), radius)
        worst = max(worst, float(np.abs(got.numpy() - want).max()))
    return worst


def _check_cost_volume(rng) -> CheckResult:
    start = time.perf_counter()
    worst = _cost_volume_max_error(rng)
    elapsed = time.perf_counter() - start
    passed = worst < 1e-5 and elapsed < 1.0
    return CheckResult(
        "cost_volume_oracle", passed, f"max |err| {worst:.2e} (tol 1e-5), {elapsed:.2f}s (< 1s)"
    )


def _check_fault_injection(rng) -> CheckResult:
    worst = _cost_volume_max_error(rng, corrupt=True)
    detected = worst > 1e-5
    return CheckResult(
        "fault_injection",
        detected,
        f"corrupted channel order drew |err| {worst:.2e}; oracle {'caught' if detected else 'MISSED'} it",
    )


def _gradient_cases(rng):
    def tensor(*shape):
        return torch.from_numpy(rng.normal(size=shape))

    ca = ChannelAttention(8).double()
    yield "channel_attention", ca, (lambda x=tensor(1, 8, 5, 6), w=tensor(1, 8, 5, 6): (ca(x) * w).sum())

    sa = SpatialAttention().double()
    yield "spatial_attention", sa, (lambda x=tensor(1, 5, 6, 6), w=tensor(1, 5, 6, 6): (sa(x) * w).sum())

    xa = CrossAttention(4).double()
    yield "cross_attention", xa, (
        lambda a=tensor(1, 4, 3, 3), b=tensor(1, 4, 3, 3), w=tensor(1, 4, 3, 3): (xa(a, b) * w).sum()
    )

    enc = CostFeatureEncoder(radius=2, hidden_channels=12, out_channels=8).double()
    yield "cost_encoder", enc, (
        lambda c=tensor(1, 25, 5, 6), w=tensor(1, 8, 5, 6): (enc(c) * w).sum()
    )

    mod = DepthModulation().double()
    yield "depth_modulation", mod, (
        lambda d=tensor(1, 1, 6, 6).abs(), w=tensor(1, 1, 6, 6): (mod(d)[1] * w).sum()
    )

    head = FlowHead(8, 6, 4, with_prev_flow=True).double()
    yield "flow_head", head, (
        lambda f=tensor(1, 8, 5, 6),
        c=tensor(1, 6, 5, 6),
        d=tensor(1, 4, 5, 6),
        g=tensor(1, 1, 5, 6).abs().clamp(0.05, 1.0),
        p=tensor(1, 2, 5, 6),
        w=tensor(1, 2, 5, 6): (estimate_flow(head, f, c, d, g, p)[0] * w).sum()
    )

    ctx = ContextNet(hidden_channels=8).double()
    yield "context_net", ctx, (
        lambda a=tensor(1, 2, 5, 5), b=tensor(1, 2, 5, 5), w=tensor(1, 2, 5, 5): (ctx(a, b) * w).sum()
    )

    pose = ResidualPoseHead(10, 6).double().eval()
    t0, q0 = identity_pose_tensors(torch.float64)
    yield "pose_head", pose, (
        lambda f=tensor(1, 10, 4, 5), d=tensor(1, 6, 4, 5), w=tensor(7): (pose(f, d, t0, q0)[0] * w).sum()
    )

    loss = ScaleAwarePoseLoss(s_t_init=0.2, s_q_init=-0.9)
    t_pred = tensor(3).requires_grad_(True)
    q_pred = tensor(4).requires_grad_(True)
    t_gt, q_gt = tensor(3), tensor(4)
    yield "pose_loss", None, (
        lambda: loss.level_loss(t_pred, q_pred, t_gt, q_gt),
        [t_pred, q_pred, loss.s_t, loss.s_q],
    )


def _check_gradients(rng, instances: int = 3):
    results = []
    for _ in range(instances):
        for name, module, case in _gradient_cases(rng):
            if module is None:
                fn, params = case
            else:
                randomize_parameters(module, rng)
                fn, params = case, list(module.parameters())
            err = relative_gradient_error(fn, params, rng=rng, samples_per_tensor=12)
            results.append((name, err))
    by_name = {}
    for name, err in results:
        by_name[name] = max(by_name.get(name, 0.0), err)
    out = []
    for name, worst in by_name.items():
        out.append(
            CheckResult(
                f"grad_{name}", worst < GRADIENT_TOLERANCE, f"max rel err {worst:.2e} (tol 1e-4)"
            )
        )
    return out


def _check_loss_identities(rng) -> CheckResult:
    loss = ScaleAwarePoseLoss(s_t_init=0.4, s_q_init=-1.1)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    t = torch.from_numpy(rng.normal(size=3))
    qt = torch.from_numpy(q if q[0] >= 0 else -q)
    perfect = loss.level_loss(t, qt, t.clone(), qt.clone()).detach().item()
    expected = (loss.s_t + loss.s_q).detach().item()
    exact = perfect == expected

    ests = [
        PoseEstimate(
            t=torch.from_numpy(rng.normal(size=3)),
            q=qt.clone(),
            level=3 - i,
            confidence_logit=torch.zeros((), dtype=torch.float64),
        )
        for i in range(4)
    ]
    gt = geometry.Pose(qt.numpy(), rng.normal(size=3))
    base = ScaleAwarePoseLoss(alpha=(1.6, 0.8, 0.4, 0.2)).total_loss(ests, gt).detach().item()
    doubled = (
        ScaleAwarePoseLoss(alpha=(3.2, 1.6, 0.8, 0.4)).total_loss(ests, gt).detach().item()
    )
    linear = abs(doubled - 2.0 * base) <= 1e-12 * max(1.0, abs(doubled))
    passed = exact and linear
    return CheckResult(
        "loss_identities",
        passed,
        f"perfect == s_t + s_q: {exact}; alpha linearity residual {abs(doubled - 2 * base):.1e}",
    )


def _check_metric_protocol(rng) -> CheckResult:
    step = geometry.Pose(np.array([1.0, 0, 0, 0]), np.array([1.0, 0, 0]))
    gt = geometry.accumulate([step] * 900)
    zero = segment_errors(gt, gt)
    zeros_ok = all(e.t_err == 0.0 and e.r_err == 0.0 for e in zero) and bool(zero)

    rels = []
    for _ in range(150):
        q = np.concatenate([[8.0], rng.normal(scale=0.05, size=3)])
        rels.append(geometry.Pose(q, rng.normal(scale=1.0, size=3)))
    gt_r = geometry.accumulate(rels)
    pred = geometry.accumulate([_random_pose(rng) for _ in range(150)])
    g = _random_pose(rng)
    moved = geometry.Trajectory(tuple(geometry.compose(g, p) for p in pred))
    base = segment_errors(gt_r, pred, lengths=(40.0, 80.0))
    shifted = segment_errors(gt_r, moved, lengths=(40.0, 80.0))
    invariance = max(
        max(abs(a.t_err - b.t_err), abs(a.r_err - b.r_err)) for a, b in zip(base, shifted)
    )

    scaled = geometry.accumulate(
        [geometry.Pose(np.array([1.0, 0, 0, 0]), np.array([0.8, 0, 0]))] * 900
    )
    t_rel, r_rel = aggregate(segment_errors(gt, scaled))
    straight = abs(t_rel - 20.0)

    passed = zeros_ok and invariance < 1e-9 and straight < 1e-6 and r_rel == 0.0
    return CheckResult(
        "metric_protocol",
        passed,
        f"gt-vs-gt zero: {zeros_ok}; rigid invariance {invariance:.1e} (tol 1e-9); "
        f"scale oracle residual {straight:.1e} (tol 1e-6)",
    )


def _check_determinism(rng) -> CheckResult:
    x = torch.from_numpy(rng.normal(size=(1, 4, 32, 32))).float()

    def run():
        torch.manual_seed(997)
        pyr = FeaturePyramid()
        return pyr(x.clone())

    a, b = run(), run()
    identical = all(torch.equal(la.fused, lb.fused) for la, lb in zip(a, b))
    return CheckResult("determinism_replay", identical, "seeded pyramid forwards bit-identical")


def run_selftest(seed: int = 0) -> SelftestReport:
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    results = [
        _check_pose_algebra(rng),
        _check_fusion_weights(rng),
        _check_cost_volume(rng),
        _check_fault_injection(rng),
    ]
    results.extend(_check_gradients(rng))
    results.append(_check_loss_identities(rng))
    results.append(_check_metric_protocol(rng))
    results.append(_check_determinism(rng))
    return SelftestReport(results=results, seed=seed)
