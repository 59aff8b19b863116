"""Convex test objectives with known constants and stochastic gradient oracles.

Every problem exposes the constants the convergence bounds consume:
strong convexity ``c``, expected-Lipschitz constant ``L`` of the stochastic
gradient, the second-moment bound ``M2`` (valid inside a test box of radius
``radius`` around the minimizer) and the minimizer ``x_star``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

DEFAULT_RADIUS = 10.0


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class GradientSample:
    value: np.ndarray
    source_view: np.ndarray
    rng_draw: Any


@dataclass(frozen=True)
class Dataset:
    """Labelled points for least-squares regression.

    ``points`` is an ``(m, d)`` feature matrix and ``labels`` has length ``m``.
    """

    points: np.ndarray
    labels: np.ndarray
    loss_kind: str = "squared"

    def __post_init__(self) -> None:
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        lab = np.asarray(self.labels, dtype=float).reshape(-1)
        if pts.size == 0 or lab.size == 0:
            raise ProblemError("dataset is empty")
        if pts.shape[0] != lab.shape[0]:
            raise ProblemError(
                f"feature rows ({pts.shape[0]}) and labels ({lab.shape[0]}) disagree"
            )
        if self.loss_kind != "squared":
            raise ProblemError(f"unsupported loss kind {self.loss_kind!r}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def sample_index(self, rng: np.random.Generator) -> int:
        return int(rng.integers(0, self.m))

    @classmethod
    def from_csv(cls, path: str | Path) -> "Dataset":
        """One row per point; the last column is the label."""
        try:
            raw = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
        except ValueError:
            # header row
            raw = np.loadtxt(path, delimiter=",", ndmin=2, comments="#", skiprows=1)
        if raw.shape[1] < 2:
            raise ProblemError("dataset CSV needs at least one feature column and a label")
        return cls(points=raw[:, :-1], labels=raw[:, -1])


@dataclass(frozen=True)
class ProblemSpec:
    """Base class; concrete problems implement ``gradient`` and ``draw``."""

    d: int
    c: float
    L: float
    M2: float
    x_star: np.ndarray
    sigma: float = 0.0
    radius: float = DEFAULT_RADIUS
    kind: str = field(default="abstract", init=False)

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ProblemError("dimension must be at least 1")
        if not (0 < self.c <= self.L * (1 + 1e-12)):
            raise ProblemError(f"need 0 < c <= L, got c={self.c}, L={self.L}")
        if self.M2 <= 0:
            raise ProblemError("M2 must be positive")

    @property
    def M(self) -> float:
        return math.sqrt(self.M2)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def draw(self, view: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, Any]:
        """Return ``(stochastic gradient, randomness used)`` without validation."""
        raise NotImplementedError

    def draw_batch(self, x: np.ndarray, rng: np.random.Generator, N: int) -> np.ndarray:
        """``N`` independent stochastic gradients at one point, shape ``(N, d)``."""
        x = np.asarray(x, dtype=float)
        return np.array([self.draw(x, rng)[0] for _ in range(N)])

    def in_box(self, x: np.ndarray) -> bool:
        return float(np.linalg.norm(np.asarray(x) - self.x_star)) <= self.radius

    def dist_sq(self, x: np.ndarray) -> float:
        diff = np.asarray(x, dtype=float) - self.x_star
        return float(diff @ diff)


@dataclass(frozen=True)
class QuadraticProblem(ProblemSpec):
    """``f(x) = ||x||^2 / 2`` with oracle ``x - u``, ``u ~ N(0, sigma^2 I)``."""

    def __post_init__(self) -> None:
        super().__post_init__()
        object.__setattr__(self, "kind", "quadratic")

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) - self.x_star

    def draw(self, view, rng):
        # always consume d normals so streams stay aligned when sigma == 0
        noise = self.sigma * rng.standard_normal(self.d)
        return view - self.x_star - noise, noise

    def draw_batch(self, x, rng, N):
        noise = self.sigma * rng.standard_normal((N, self.d))
        return np.asarray(x, dtype=float) - self.x_star - noise


@dataclass(frozen=True)
class RegressionProblem(ProblemSpec):
    """Ridge least squares; the oracle differentiates one uniformly drawn point.

    Per-point loss is ``(a_i . x - y_i)^2 / 2 + ridge * ||x||^2 / 2``.
    """

    data: Dataset | None = None
    ridge: float = 0.0

    def __post_init__(self) -> None:
        super().__post_init__()
        object.__setattr__(self, "kind", "regression")

    def point_gradient(self, i: int, x: np.ndarray) -> np.ndarray:
        a = self.data.points[i]
        return a * (a @ x - self.data.labels[i]) + self.ridge * x

    def gradient(self, x):
        A, y = self.data.points, self.data.labels
        x = np.asarray(x, dtype=float)
        return A.T @ (A @ x - y) / self.data.m + self.ridge * x

    def draw(self, view, rng):
        i = self.data.sample_index(rng)
        return self.point_gradient(i, view), i

    def draw_batch(self, x, rng, N):
        x = np.asarray(x, dtype=float)
        idx = rng.integers(0, self.data.m, size=N)
        A = self.data.points[idx]
        return A * (A @ x - self.data.labels[idx])[:, None] + self.ridge * x


def quadratic_problem(d: int, sigma: float, radius: float = DEFAULT_RADIUS) -> QuadraticProblem:
    """Isotropic quadratic with Gaussian gradient noise.

    ``M2 = (radius + 3 sigma sqrt(d))^2`` bounds the second moment for every
    point within ``radius`` of the minimizer.
    """
    if d < 1:
        raise ProblemError("dimension must be at least 1")
    if sigma < 0:
        raise ProblemError("sigma must be nonnegative")
    M2 = (radius + 3.0 * sigma * math.sqrt(d)) ** 2
    return QuadraticProblem(
        d=d, c=1.0, L=1.0, M2=M2, x_star=np.zeros(d), sigma=float(sigma), radius=radius
    )


def regression_problem(
    data: Dataset, ridge: float = 0.0, radius: float = DEFAULT_RADIUS
) -> RegressionProblem:
    if ridge < 0:
        raise ProblemError("ridge must be nonnegative")
    A, y = data.points, data.labels
    m, d = A.shape
    second_moment = A.T @ A / m
    eig = np.linalg.eigvalsh(second_moment)
    c = float(eig[0]) + ridge
    if c <= 1e-12 * max(1.0, float(eig[-1])):
        raise ProblemError("unidentifiable minimizer: normal equations are singular")
    x_star = np.linalg.solve(second_moment + ridge * np.eye(d), A.T @ y / m)
    row_sq = np.einsum("ij,ij->i", A, A)
    # E||g(x) - g(y)|| <= E(||a_i||^2 + ridge) ||x - y||
    L = float(row_sq.mean()) + ridge
    at_opt = A * (A @ x_star - y)[:, None] + ridge * x_star
    grad_norm_opt = np.linalg.norm(at_opt, axis=1)
    M2 = float(np.mean((grad_norm_opt + (row_sq + ridge) * radius) ** 2))
    return RegressionProblem(
        d=d,
        c=c,
        L=max(L, c),
        M2=M2,
        x_star=x_star,
        sigma=0.0,
        radius=radius,
        data=data,
        ridge=float(ridge),
    )


def sample_gradient(spec: ProblemSpec, view, rng: np.random.Generator) -> GradientSample:
    view = np.asarray(view, dtype=float)
    if view.shape != (spec.d,):
        raise ProblemError(f"view has shape {view.shape}, expected ({spec.d},)")
    if not np.all(np.isfinite(view)):
        raise ProblemError("view contains non-finite entries")
    value, draw = spec.draw(view, rng)
    return GradientSample(value=value, source_view=view.copy(), rng_draw=draw)


def thread_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent per-thread generator streams derived from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def problem_from_config(cfg: dict) -> ProblemSpec:
    kind = cfg.get("problem.kind", "quadratic")
    radius = float(cfg.get("problem.radius", DEFAULT_RADIUS))
    if kind == "quadratic":
        return quadratic_problem(int(cfg.get("problem.d", 1)), float(cfg.get("problem.sigma", 0.0)), radius)
    if kind == "regression":
        path = cfg.get("problem.data_path")
        if not path:
            raise ProblemError("problem.data_path is required for regression")
        return regression_problem(Dataset.from_csv(path), float(cfg.get("problem.ridge", 0.0)), radius)
    raise ProblemError(f"unknown problem.kind {kind!r}")
