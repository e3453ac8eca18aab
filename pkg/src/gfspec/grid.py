"""Discretized circle S^1 = R/Z, sampled scalar fields and finite differences."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class CircleGrid:
    """Uniform grid q_i = i/n on the circle of circumference 1."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 8:
            raise ValueError(f"CircleGrid needs an integer n >= 8, got {self.n}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.n) / self.n

    def wrap(self, i):
        return np.mod(i, self.n)

    def __len__(self):
        return self.n


@dataclass(frozen=True)
class FiberLattice:
    """Regular lattice on the box prod_j [-R_j, R_j] with `resolution` intervals per axis."""

    radii: tuple
    resolution: int

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("fiber resolution must be at least 2")
        if any(r <= 0 for r in self.radii):
            raise ValueError("fiber radii must be positive")

    @property
    def dim(self) -> int:
        return len(self.radii)

    @property
    def axes(self) -> list:
        return [np.linspace(-r, r, self.resolution + 1) for r in self.radii]

    @property
    def spacings(self) -> np.ndarray:
        return np.array([2.0 * r / self.resolution for r in self.radii])

    @property
    def shape(self) -> tuple:
        return (self.resolution + 1,) * self.dim


@dataclass(frozen=True)
class ProductDomain:
    """The product S^1 x box, sampled as CircleGrid x FiberLattice (q is the leading axis)."""

    grid: CircleGrid
    fiber: FiberLattice

    @property
    def shape(self) -> tuple:
        return (self.grid.n,) + self.fiber.shape

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def coordinates(self) -> np.ndarray:
        """All lattice points as an array of shape (size, 1 + d) in C order."""
        axes = [self.grid.points] + self.fiber.axes
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True)
class ScalarField:
    """Real values sampled on a CircleGrid or on a ProductDomain."""

    domain: object
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        shape = _domain_shape(self.domain)
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != shape:
            if vals.size != int(np.prod(shape)):
                raise ValueError(f"value count {vals.size} does not match domain size {int(np.prod(shape))}")
            vals = vals.reshape(shape)
        if not np.all(np.isfinite(vals)):
            bad = np.argwhere(~np.isfinite(vals))[0]
            raise ValueError(f"non-finite field value at index {tuple(int(b) for b in bad)}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def to_csv(self, path) -> None:
        if isinstance(self.domain, CircleGrid):
            coords = self.domain.points[:, None]
            header = ["q", "value"]
        else:
            coords = self.domain.coordinates()
            header = ["q"] + [f"e{j}" for j in range(self.domain.fiber.dim)] + ["value"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row, v in zip(coords, self.values.ravel()):
                w.writerow([repr(float(c)) for c in row] + [repr(float(v))])


def _domain_shape(domain) -> tuple:
    if isinstance(domain, CircleGrid):
        return (domain.n,)
    if isinstance(domain, ProductDomain):
        return domain.shape
    raise TypeError(f"unsupported domain {type(domain).__name__}")


def sample_function(f: Callable, grid: CircleGrid) -> ScalarField:
    """Sample f at q_i = i/n. Non-finite samples are rejected with the offending index."""
    q = grid.points
    try:
        vals = np.asarray(f(q), dtype=float)
        if vals.shape != q.shape:
            vals = np.broadcast_to(vals, q.shape).astype(float)
    except (TypeError, ValueError):
        vals = np.array([float(f(x)) for x in q])
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise ValueError(f"non-finite sample at index {int(bad[0])} (q={q[bad[0]]!r})")
    return ScalarField(grid, vals)


def sample_product(S: Callable, domain: ProductDomain) -> ScalarField:
    """Sample S(q, e) on all lattice points of S^1 x box; S takes q (N,) and e (N, d)."""
    pts = domain.coordinates()
    vals = np.asarray(S(pts[:, 0], pts[:, 1:]), dtype=float)
    return ScalarField(domain, vals)


def grad_fd(field: ScalarField) -> list:
    """Central differences per coordinate direction.

    The q direction wraps periodically; fiber directions use second-order
    one-sided stencils at the box boundary. Returns one ScalarField per axis.
    """
    dom = field.domain
    v = field.values
    if isinstance(dom, CircleGrid):
        if dom.n < 3:
            raise ValueError("need at least 3 points on the circle")
        return [ScalarField(dom, (np.roll(v, -1) - np.roll(v, 1)) / (2.0 * dom.spacing))]
    out = [ScalarField(dom, (np.roll(v, -1, axis=0) - np.roll(v, 1, axis=0)) / (2.0 * dom.grid.spacing))]
    for j, h in enumerate(dom.fiber.spacings):
        axis = j + 1
        if v.shape[axis] < 3:
            raise ValueError("need at least 3 points per fiber axis")
        out.append(ScalarField(dom, np.gradient(v, h, axis=axis, edge_order=2)))
    return out


def lipschitz_estimate(field: ScalarField) -> float:
    """Largest absolute finite-difference slope along q (wrapping)."""
    v = field.values
    dom = field.domain
    n = dom.n if isinstance(dom, CircleGrid) else dom.grid.n
    return float(np.max(np.abs(np.roll(v, -1, axis=0) - v)) * n)


def periodic_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance on R/Z between representatives a and b."""
    d = np.mod(np.asarray(a) - np.asarray(b), 1.0)
    return np.minimum(d, 1.0 - d)


def resample_closed(values: Sequence, factor: int) -> np.ndarray:
    """Linear upsampling of a closed periodic sequence by an integer factor."""
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    t = np.arange(n * factor) / factor
    i0 = np.floor(t).astype(int)
    w = (t - i0)[(...,) + (None,) * (v.ndim - 1)]
    return (1 - w) * v[i0 % n] + w * v[(i0 + 1) % n]
