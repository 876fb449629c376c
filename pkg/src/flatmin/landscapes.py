"""Analytic 2-parameter loss surfaces built from Gaussian wells.

Each well contributes -depth * exp(-||theta - center||^2 / (2 width^2)),
so loss, gradient and Hessian are available in closed form everywhere.
Trajectory simulation runs an optimizer on the exact gradient; the grid
flatness study batches thousands of independent starts into one big
parameter vector (every optimizer update is elementwise, so this is
exactly equivalent to running each start separately).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError
from .optim import (
    LrSchedule,
    OptimizerParams,
    build_optimizer,
    schedule_multiplier,
)

Point = tuple[float, float]


@dataclass(frozen=True)
class WellSpec:
    center: Point
    depth: float
    width: float

    def __post_init__(self):
        if self.depth <= 0:
            raise ContractViolationError("well depth must be > 0")
        if self.width <= 0:
            raise ContractViolationError("well width must be > 0")


@dataclass(frozen=True)
class LandscapeSpec:
    wells: tuple[WellSpec, ...]
    base_level: float = 0.0

    def __post_init__(self):
        if len(self.wells) < 1:
            raise ContractViolationError("landscape needs at least one well")


@dataclass
class TrajectoryRecord:
    """Per-step samples of one optimizer run plus final-point diagnostics."""

    steps: list[tuple[int, Point, float]]
    final_theta: Point
    converged_well: int | None
    flatness: float


def _well_arrays(spec: LandscapeSpec):
    centers = np.array([w.center for w in spec.wells])  # (W, 2)
    depths = np.array([w.depth for w in spec.wells])  # (W,)
    widths = np.array([w.width for w in spec.wells])  # (W,)
    return centers, depths, widths


def batch_loss_grad(spec: LandscapeSpec, thetas: np.ndarray):
    """Loss (B,) and gradient (B, 2) for a batch of points (B, 2)."""
    centers, depths, widths = _well_arrays(spec)
    diff = thetas[:, None, :] - centers[None, :, :]  # (B, W, 2)
    r2 = np.sum(diff * diff, axis=2)  # (B, W)
    w2 = widths * widths
    e = depths * np.exp(-r2 / (2.0 * w2))  # (B, W)
    loss = spec.base_level - np.sum(e, axis=1)
    grad = np.sum((e / w2)[:, :, None] * diff, axis=1)
    return loss, grad


def landscape_eval(spec: LandscapeSpec, theta: Point):
    """Loss, exact gradient (2,) and exact Hessian (2, 2) at one point."""
    th = np.asarray(theta, dtype=np.float64).reshape(1, 2)
    centers, depths, widths = _well_arrays(spec)
    diff = th[:, None, :] - centers[None, :, :]
    r2 = np.sum(diff * diff, axis=2)
    w2 = widths * widths
    e = depths * np.exp(-r2 / (2.0 * w2))  # (1, W)
    loss = float(spec.base_level - np.sum(e))
    grad = np.sum((e / w2)[:, :, None] * diff, axis=1)[0]
    hess = np.zeros((2, 2))
    for k in range(len(spec.wells)):
        u = diff[0, k]
        hess += (e[0, k] / w2[k]) * (np.eye(2) - np.outer(u, u) / w2[k])
    return loss, grad, hess


def flatness_from_hessian(hess: np.ndarray) -> float:
    """Sum of absolute eigenvalues of a symmetric 2x2 matrix, in closed form."""
    a, b, d = hess[0, 0], hess[0, 1], hess[1, 1]
    tr = a + d
    disc = np.sqrt((a - d) ** 2 + 4.0 * b * b)
    lam1 = 0.5 * (tr + disc)
    lam2 = 0.5 * (tr - disc)
    return abs(lam1) + abs(lam2)


def classify_converged_well(spec: LandscapeSpec, theta: Point) -> int | None:
    """Index of the nearest well center within 3*width of theta, else None."""
    th = np.asarray(theta)
    best = None
    best_dist = np.inf
    for i, w in enumerate(spec.wells):
        dist = float(np.linalg.norm(th - np.asarray(w.center)))
        if dist <= 3.0 * w.width and dist < best_dist:
            best, best_dist = i, dist
    return best


def simulate_trajectory(
    spec: LandscapeSpec,
    start: Point,
    optimizer: OptimizerParams,
    sched: LrSchedule,
    total_steps: int,
) -> TrajectoryRecord:
    """Run one optimizer from ``start`` on the exact gradient, recording every step."""
    if total_steps < 0:
        raise ContractViolationError("total_steps must be >= 0")
    theta = np.asarray(start, dtype=np.float64).copy()
    opt = build_optimizer(optimizer, 2)
    steps: list[tuple[int, Point, float]] = []
    for t in range(1, total_steps + 1):
        loss, grad = batch_loss_grad(spec, theta.reshape(1, 2))
        mult = schedule_multiplier(sched, t - 1)
        theta = opt.step(theta, grad[0], lr_multiplier=mult)
        steps.append((t, (float(theta[0]), float(theta[1])), float(loss[0])))
    final = (float(theta[0]), float(theta[1]))
    _, _, hess = landscape_eval(spec, final)
    return TrajectoryRecord(
        steps=steps,
        final_theta=final,
        converged_well=classify_converged_well(spec, final),
        flatness=flatness_from_hessian(hess),
    )


def grid_starts(region, grid) -> np.ndarray:
    """Row-major (rows*cols, 2) grid of start points over a rectangular region."""
    (x0, x1), (y0, y1) = region
    rows, cols = grid
    if rows < 1 or cols < 1:
        raise ContractViolationError("grid dimensions must be >= 1")
    xs = np.linspace(x0, x1, cols) if cols > 1 else np.array([0.5 * (x0 + x1)])
    ys = np.linspace(y0, y1, rows) if rows > 1 else np.array([0.5 * (y0 + y1)])
    pts = [(x, y) for y in ys for x in xs]
    return np.array(pts)


def grid_flatness_study(
    spec: LandscapeSpec,
    region,
    grid,
    optimizers: list[OptimizerParams],
    sched: LrSchedule,
    total_steps: int,
) -> list[np.ndarray]:
    """Final-point flatness for every grid start, per optimizer.

    Results are in row-major grid order.  Internally all starts run as a
    single concatenated parameter vector, which is equivalent to
    per-start runs because every optimizer update rule is elementwise.
    """
    starts = grid_starts(region, grid)
    n = len(starts)
    results = []
    for params in optimizers:
        theta = starts.reshape(-1).copy()
        opt = build_optimizer(params, 2 * n)
        for t in range(1, total_steps + 1):
            _, grad = batch_loss_grad(spec, theta.reshape(n, 2))
            mult = schedule_multiplier(sched, t - 1)
            theta = opt.step(theta, grad.reshape(-1), lr_multiplier=mult)
        finals = theta.reshape(n, 2)
        flat = np.empty(n)
        for i in range(n):
            _, _, hess = landscape_eval(spec, (finals[i, 0], finals[i, 1]))
            flat[i] = flatness_from_hessian(hess)
        results.append(flat)
    return results
