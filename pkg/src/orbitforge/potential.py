"""Potentials U, the energy shift V = U + alpha, and critical points.

All evaluators are vectorized: ``x`` has shape ``(..., n)``; ``value`` returns
shape ``(...)``, ``grad`` ``(..., n)`` and ``hessian`` ``(..., n, n)``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import expr as ex

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
DEGENERACY_TOL = 1e-6
DEDUPE_FACTOR = 1e-6

C2 = "C2"
C0 = "C0"


class PotentialError(ValueError):
    pass


class CriticalPointWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Box:
    """Axis-aligned bounding box; the numerical stand-in for coercivity."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise ValueError("box corners must have the same positive dimension")
        if any(h <= l for l, h in zip(lo, hi)):
            raise ValueError(f"degenerate box {lo} .. {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def square(cls, half_width: float, dimension: int = 2) -> "Box":
        return cls((-half_width,) * dimension, (half_width,) * dimension)

    @property
    def dimension(self) -> int:
        return len(self.lo)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(np.subtract(self.hi, self.lo)))

    def contains(self, x, pad: float = 0.0):
        x = np.asarray(x, dtype=float)
        return np.all((x >= np.asarray(self.lo) - pad) & (x <= np.asarray(self.hi) + pad), axis=-1)


class Potential:
    """Scalar field with gradient and Hessian."""

    label = "potential"
    smoothness = C2

    def __init__(self, dimension: int, label: Optional[str] = None, smoothness: str = C2):
        self.dimension = int(dimension)
        if label is not None:
            self.label = label
        if smoothness not in (C2, C0):
            raise ValueError(f"smoothness must be {C2!r} or {C0!r}")
        self.smoothness = smoothness

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        """Central differences; subclasses with exact derivatives override."""
        x = np.asarray(x, dtype=float)
        h = 1e-6 * np.maximum(1.0, np.abs(x))
        g = np.empty_like(x)
        for i in range(self.dimension):
            e = np.zeros_like(x)
            e[..., i] = h[..., i]
            g[..., i] = (self.value(x + e) - self.value(x - e)) / (2 * h[..., i])
        return g

    def hessian(self, x):
        if self.smoothness != C2:
            raise PotentialError(f"{self.label}: Hessian unavailable for a {self.smoothness} potential")
        return self._hessian(x)

    def _hessian(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.value(x)

    def __repr__(self):
        return f"<{type(self).__name__} {self.label} n={self.dimension}>"


class ExprPotential(Potential):
    """Potential backed by a parsed expression with late-bound parameters."""

    def __init__(self, e: ex.Expr, params: Optional[Mapping[str, float]] = None,
                 dimension: Optional[int] = None, smoothness: str = C2):
        n = max(e.dimension, dimension or 0, 1)
        super().__init__(n, label=e.source or str(e), smoothness=smoothness)
        self.expr = e
        self.params = dict(params or {})
        missing = e.params.difference(self.params)
        if missing:
            raise ex.UnboundParameterError(f"parameter {sorted(missing)[0]!r} is not bound")

    @classmethod
    def from_source(cls, source: str, params=None, dimension=None, smoothness=C2):
        return cls(ex.parse(source), params, dimension, smoothness)

    def _own(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dimension:
            raise ValueError(f"expected points with {self.dimension} coordinates")
        return x[..., : self.expr.dimension]

    def value(self, x):
        return self.expr.eval(self._own(x), self.params)

    def grad(self, x):
        if self.smoothness != C2:
            return super().grad(x)
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape, dtype=float)
        k = self.expr.dimension
        if k:
            g[..., :k] = self.expr.grad(self._own(x), self.params)
        return g

    def _hessian(self, x):
        x = np.asarray(x, dtype=float)
        n, k = self.dimension, self.expr.dimension
        h = np.zeros(x.shape + (n,), dtype=float)
        if k:
            h[..., :k, :k] = self.expr.hessian(self._own(x), self.params)
        return h


class ShiftedPotential(Potential):
    """V(x) = U(x) + alpha.  Derivatives are those of U."""

    def __init__(self, base: Potential, alpha: float):
        if isinstance(base, ShiftedPotential):
            alpha = base.alpha + alpha
            base = base.base
        super().__init__(base.dimension, label=f"{base.label} + ({alpha:g})", smoothness=base.smoothness)
        self.base = base
        self.alpha = float(alpha)

    def value(self, x):
        return self.base.value(x) + self.alpha

    def grad(self, x):
        return self.base.grad(x)

    def hessian(self, x):
        return self.base.hessian(x)


def shift(U: Potential, alpha: float) -> ShiftedPotential:
    return ShiftedPotential(U, alpha)


# --------------------------------------------------------------------------- #
# built-in potentials


class Ex2(Potential):
    """U = (1 - x1^2)^2 / 2 + (1 - 4 x2^2)^2 / 2."""

    label = "ex2"

    def __init__(self):
        super().__init__(2)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        a, b = x[..., 0], x[..., 1]
        return 0.5 * (1 - a * a) ** 2 + 0.5 * (1 - 4 * b * b) ** 2

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        a, b = x[..., 0], x[..., 1]
        return np.stack([-2 * a * (1 - a * a), -8 * b * (1 - 4 * b * b)], axis=-1)

    def _hessian(self, x):
        x = np.asarray(x, dtype=float)
        a, b = x[..., 0], x[..., 1]
        h = np.zeros(x.shape + (2,))
        h[..., 0, 0] = 6 * a * a - 2
        h[..., 1, 1] = 96 * b * b - 8
        return h


class Perturbed(Potential):
    """U = 2 l^4 x1^2 + x2^2 - 2 l^2 x1 x2 - 3 l^2 x1^4 + x1^6 (antipodally symmetric)."""

    def __init__(self, lam: float = 0.5):
        super().__init__(2, label=f"perturbed(lambda={lam:g})")
        self.lam = float(lam)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        a, b, l2 = x[..., 0], x[..., 1], self.lam ** 2
        a2 = a * a
        return 2 * l2 * l2 * a2 + b * b - 2 * l2 * a * b - 3 * l2 * a2 * a2 + a2 * a2 * a2

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        a, b, l2 = x[..., 0], x[..., 1], self.lam ** 2
        a2 = a * a
        ga = 4 * l2 * l2 * a - 2 * l2 * b - 12 * l2 * a2 * a + 6 * a2 * a2 * a
        gb = 2 * b - 2 * l2 * a
        return np.stack([ga, gb], axis=-1)

    def _hessian(self, x):
        x = np.asarray(x, dtype=float)
        a, l2 = x[..., 0], self.lam ** 2
        a2 = a * a
        h = np.empty(x.shape + (2,))
        h[..., 0, 0] = 4 * l2 * l2 - 36 * l2 * a2 + 30 * a2 * a2
        h[..., 0, 1] = -2 * l2
        h[..., 1, 0] = -2 * l2
        h[..., 1, 1] = 2.0
        return h

    def critical_points_closed_form(self) -> dict:
        """p0, p1, p2 from the closed-form expressions (used as a check)."""
        lam = self.lam
        s1 = np.sqrt(1 - np.sqrt(2 / 3))
        s2 = np.sqrt(1 + np.sqrt(2 / 3))
        return {
            "p0": np.zeros(2),
            "p1": np.array([lam * s1, lam ** 3 * s1]),
            "p2": np.array([lam * s2, lam ** 3 * s2]),
        }


class Disk(Potential):
    """U = 1 - |x|^2."""

    label = "disk"

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return 1.0 - np.sum(x * x, axis=-1)

    def grad(self, x):
        return -2.0 * np.asarray(x, dtype=float)

    def _hessian(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(-2.0 * np.eye(self.dimension), x.shape + (self.dimension,)).copy()


class PolarOscillatory(Potential):
    """U(r, theta) = -r^2 + tanh(r)^4 cos(1/r)^2 cos(2 theta)^(2k) / 2.

    Derivatives by dual numbers on the Cartesian form; the bump is dropped for
    r < 1e-6 where it is below 1e-24 (and its gradient below 1e-12).
    """

    r_min = 1e-6

    def __init__(self, k: int = 4):
        super().__init__(2, label=f"polar_oscillatory(k={k:g})")
        self.k = k

    def _f(self, a, b):
        r2 = a * a + b * b
        r = ex.sqrt(r2)
        c2 = (a * a - b * b) / r2
        t = ex.tanh(r)
        c = ex.cos(1.0 / r)
        return 0.5 * ex.power(t, 4.0) * c * c * ex.power(c2, 2.0 * self.k)

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 2)
        mask = np.einsum("ij,ij->i", flat, flat) >= self.r_min ** 2
        return x, flat, mask

    def value(self, x):
        x, flat, mask = self._split(x)
        out = -np.einsum("ij,ij->i", flat, flat)
        with np.errstate(all="ignore"):
            out[mask] += self._f(flat[mask, 0], flat[mask, 1])
        out = out.reshape(x.shape[:-1])
        return float(out) if out.ndim == 0 else out

    def grad(self, x):
        x, flat, mask = self._split(x)
        g = -2.0 * flat.copy()
        a, b = flat[mask, 0], flat[mask, 1]
        one, zero = np.ones_like(a), np.zeros_like(a)
        with np.errstate(all="ignore"):
            g[mask, 0] += self._f(ex.Dual(a, one), ex.Dual(b, zero)).du
            g[mask, 1] += self._f(ex.Dual(a, zero), ex.Dual(b, one)).du
        return g.reshape(x.shape)

    def _hessian(self, x):
        x, flat, mask = self._split(x)
        h = np.zeros((flat.shape[0], 2, 2))
        h[:, 0, 0] = h[:, 1, 1] = -2.0
        a, b = flat[mask, 0], flat[mask, 1]
        one, zero = np.ones_like(a), np.zeros_like(a)
        seeds = [one, zero], [zero, one]
        with np.errstate(all="ignore"):
            for i in range(2):
                for j in range(i, 2):
                    A = ex.Dual(ex.Dual(a, seeds[i][0]), ex.Dual(seeds[j][0], zero))
                    B = ex.Dual(ex.Dual(b, seeds[i][1]), ex.Dual(seeds[j][1], zero))
                    d2 = self._f(A, B).du.du
                    h[mask, i, j] += d2
                    if i != j:
                        h[mask, j, i] += d2
        return h.reshape(x.shape + (2,))


BUILTINS: dict[str, Callable[..., Potential]] = {
    "ex2": lambda **p: Ex2(),
    "perturbed": lambda **p: Perturbed(float(p.get("lambda", p.get("lam", 0.5)))),
    "disk": lambda **p: Disk(int(p.get("dimension", 2)), label="disk"),
    "polar_oscillatory": lambda **p: PolarOscillatory(int(p.get("k", 4))),
}


def builtin(name: str, params: Optional[Mapping[str, float]] = None) -> Potential:
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise PotentialError(f"unknown builtin potential {name!r}; choose from {sorted(BUILTINS)}") from None
    return factory(**dict(params or {}))


# --------------------------------------------------------------------------- #
# critical points


def jacobi_eigenvalues(a, tol: float = 1e-15, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("square matrix required")
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta == 0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    t = 0.5 / theta  # theta^2 would overflow
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                a[p, q] = a[q, p] = 0.0
    return np.sort(np.diag(a))


@dataclass(frozen=True)
class CriticalPoint:
    location: np.ndarray
    grad_norm: float
    eigenvalues: np.ndarray
    hyperbolic: bool
    morse_index: int
    potential_value: float
    id: int = -1

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "location": [float(v) for v in self.location],
            "grad_norm": float(self.grad_norm),
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "hyperbolic": bool(self.hyperbolic),
            "morse_index": int(self.morse_index),
            "potential_value": float(self.potential_value),
        }


def classify_point(V: Potential, x, degeneracy_tol: float = DEGENERACY_TOL, id: int = -1) -> CriticalPoint:
    x = np.asarray(x, dtype=float)
    eig = jacobi_eigenvalues(V.hessian(x))
    return CriticalPoint(
        location=x.copy(),
        grad_norm=float(np.linalg.norm(V.grad(x))),
        eigenvalues=eig,
        hyperbolic=bool(np.min(np.abs(eig)) > degeneracy_tol),
        morse_index=int(np.sum(eig < 0)),
        potential_value=float(V.value(x)),
        id=id,
    )


def _newton(V: Potential, x: np.ndarray, max_step: float, iters: int = 60, tol: float = NEWTON_TOL):
    x = x.copy()
    done = np.zeros(len(x), dtype=bool)
    for _ in range(iters):
        g = V.grad(x)
        gn = np.linalg.norm(g, axis=-1)
        done = gn < tol
        active = ~done & np.all(np.isfinite(x), axis=-1)
        if not active.any():
            break
        H = V.hessian(x[active])
        step = np.full((active.sum(), x.shape[1]), np.nan)
        ok = np.abs(np.linalg.det(H)) > 1e-300
        if ok.any():
            step[ok] = -np.linalg.solve(H[ok], g[active][ok][..., None])[..., 0]
        norm = np.linalg.norm(step, axis=-1, keepdims=True)
        step = np.where(norm > max_step, step * (max_step / np.where(norm > 0, norm, 1)), step)
        x[active] += step
    g = V.grad(x)
    done = np.linalg.norm(g, axis=-1) < tol
    return x, done


def find_critical_points(
    V: Potential,
    bbox: Box,
    seeds: int | Sequence[int] = 21,
    newton_tol: float = NEWTON_TOL,
    degeneracy_tol: float = DEGENERACY_TOL,
    dedupe_radius: Optional[float] = None,
) -> list[CriticalPoint]:
    """Newton on grad V = 0 from a grid of seeds; deduplicated and classified.

    Results are sorted lexicographically by location.
    """
    if V.smoothness != C2:
        raise PotentialError("critical-point search needs a C2 potential")
    n = V.dimension
    counts = [int(seeds)] * n if np.ndim(seeds) == 0 else [int(s) for s in seeds]
    axes = [np.linspace(lo, hi, c) for lo, hi, c in zip(bbox.lo, bbox.hi, counts)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    radius = dedupe_radius if dedupe_radius is not None else DEDUPE_FACTOR * bbox.diagonal
    x, ok = _newton(V, grid, max_step=0.25 * bbox.diagonal, tol=newton_tol)
    x = x[ok & bbox.contains(x)]

    order = np.lexsort(x.T[::-1]) if len(x) else np.array([], dtype=int)
    accepted: list[np.ndarray] = []
    for p in x[order]:
        if all(np.linalg.norm(p - q) > radius for q in accepted):
            accepted.append(p)
    # polish and re-verify: Newton from an accepted point must be a fixed point
    if accepted:
        pts, good = _newton(V, np.array(accepted), max_step=radius, iters=5, tol=newton_tol)
        accepted = [p for p, g in zip(pts, good) if g]
    accepted.sort(key=lambda p: tuple(p))
    for i, p in enumerate(accepted):
        for q in accepted[i + 1:]:
            if np.linalg.norm(p - q) < 3 * radius:
                warnings.warn(f"critical points {p} and {q} are closer than 3x the dedupe radius",
                              CriticalPointWarning, stacklevel=2)
    return [classify_point(V, p, degeneracy_tol, id=i) for i, p in enumerate(accepted)]


def check_antipodal_symmetry(V: Potential, bbox: Box, samples: int = 64, seed: int = 0,
                             rtol: float = 1e-9) -> bool:
    """Sampled test of V(-x) = V(x)."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(bbox.lo, bbox.hi, size=(samples, bbox.dimension))
    a, b = V.value(x), V.value(-x)
    return bool(np.all(np.abs(a - b) <= rtol * np.maximum(1.0, np.abs(a))))
