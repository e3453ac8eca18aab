"""Generating functions quadratic at infinity over S^1 and their fronts and spectra.

A generating function is an immutable expression node with a total, vectorized
evaluator S(q, e) and its gradient. Nodes carry enough metadata (quadratic form,
per-axis core and support radii, bounds on S - Q) for the homology module to
choose a truncation box and a negative-end level.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from .grid import CircleGrid

TOL_CRIT = 1e-6
FD_STEP = 1e-5


# --------------------------------------------------------------------------- forms


@dataclass(frozen=True)
class QuadraticForm:
    """Diagonal nondegenerate form Q(e) = sum_j c_j e_j^2."""

    coeffs: tuple = ()

    def __post_init__(self):
        c = tuple(float(x) for x in self.coeffs)
        if any(x == 0.0 or not np.isfinite(x) for x in c):
            raise ValueError(f"degenerate quadratic form {c}")
        object.__setattr__(self, "coeffs", c)

    @property
    def dim(self) -> int:
        return len(self.coeffs)

    @property
    def index(self) -> int:
        """Negative index d_-."""
        return sum(1 for c in self.coeffs if c < 0)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.coeffs, dtype=float)

    def __call__(self, e: np.ndarray) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        if self.dim == 0:
            return np.zeros(e.shape[:-1])
        return (e * e) @ self.array

    def grad(self, e: np.ndarray) -> np.ndarray:
        return 2.0 * np.asarray(e, dtype=float) * self.array

    def direct_sum(self, other: "QuadraticForm") -> "QuadraticForm":
        return QuadraticForm(self.coeffs + other.coeffs)

    def negated(self) -> "QuadraticForm":
        return QuadraticForm(tuple(-c for c in self.coeffs))


# --------------------------------------------------------------------------- q-only functions


class PeriodicFunction:
    """Smooth 1-periodic function with derivative, built from a callable or samples."""

    def __init__(self, f: Callable, df: Optional[Callable] = None, label: str = "f"):
        self._f = f
        self._df = df
        self.label = label

    @classmethod
    def from_samples(cls, values, label="spline") -> "PeriodicFunction":
        v = np.asarray(values, dtype=float)
        n = v.size
        x = np.arange(n + 1) / n
        spl = CubicSpline(x, np.append(v, v[0]), bc_type="periodic")
        return cls(lambda q: spl(np.mod(q, 1.0)), lambda q: spl(np.mod(q, 1.0), 1), label=label)

    @classmethod
    def constant(cls, c: float) -> "PeriodicFunction":
        c = float(c)
        return cls(lambda q: np.full(np.shape(q), c), lambda q: np.zeros(np.shape(q)), label=repr(c))

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        return np.broadcast_to(np.asarray(self._f(q), dtype=float), q.shape).copy()

    def derivative(self, q):
        q = np.asarray(q, dtype=float)
        if self._df is not None:
            return np.broadcast_to(np.asarray(self._df(q), dtype=float), q.shape).copy()
        return (self(q + FD_STEP) - self(q - FD_STEP)) / (2 * FD_STEP)

    def bounds(self, samples: int = 4096) -> tuple:
        v = self(np.arange(samples) / samples)
        return float(v.min()), float(v.max())

    def scaled(self, s: float) -> "PeriodicFunction":
        return PeriodicFunction(lambda q: s * self(q), lambda q: s * self.derivative(q), label=f"{s}*{self.label}")


# --------------------------------------------------------------------------- nodes


class Gfqi:
    """Base class for generating-function expression nodes.

    Subclasses implement `_eval(q, e)` returning (S, dS/dq, dS/de) for
    q of shape (N,) and e of shape (N, d).

    Metadata:
        Q: quadratic form at infinity.
        core: per-axis radius of a box containing every fiber-critical point.
        support: per-axis radius outside which S - Q depends on q only.
        dev: (lo, hi) bounds on S - Q over the whole domain.
    """

    kind = "node"

    def __init__(self, Q: QuadraticForm, core, support, dev, parents=(), label=""):
        self.Q = Q
        self.core = tuple(float(c) for c in core)
        self.support = tuple(float(s) for s in support)
        self.dev = (float(dev[0]), float(dev[1]))
        self.parents = tuple(parents)
        self.label = label
        if len(self.core) != Q.dim or len(self.support) != Q.dim:
            raise ValueError("metadata length does not match fiber dimension")

    @property
    def dim(self) -> int:
        return self.Q.dim

    @property
    def index(self) -> int:
        return self.Q.index

    @property
    def support_radius(self) -> float:
        return max(self.support, default=0.0)

    def _prep(self, q, e):
        q = np.atleast_1d(np.asarray(q, dtype=float))
        e = np.asarray(e, dtype=float)
        if e.ndim == 1:
            e = e.reshape(q.shape[0], self.dim) if self.dim else np.zeros((q.shape[0], 0))
        return q, e

    def __call__(self, q, e):
        q, e = self._prep(q, e)
        return self._eval(q, e)[0]

    def evaluate(self, q, e):
        return self(q, e)

    def value_and_grad(self, q, e):
        q, e = self._prep(q, e)
        return self._eval(q, e)

    def gradient(self, q, e):
        _, dq, de = self.value_and_grad(q, e)
        return dq, de

    def provenance(self) -> dict:
        return {"kind": self.kind, "label": self.label, "dim": self.dim, "index": self.index,
                "parents": [p.provenance() for p in self.parents]}

    def _eval(self, q, e):
        raise NotImplementedError


class QuadraticPlusBase(Gfqi):
    """S(q, e) = g(q) + Q(e): jets of functions, stabilized or not, and pure quadratics."""

    kind = "primitive"

    def __init__(self, g: PeriodicFunction, Q: QuadraticForm, label=""):
        lo, hi = g.bounds()
        super().__init__(Q, core=(0.5,) * Q.dim, support=(0.0,) * Q.dim, dev=(lo, hi), label=label or g.label)
        self.g = g

    def _eval(self, q, e):
        return self.g(q) + self.Q(e), self.g.derivative(q), self.Q.grad(e)


class FunctionGfqi(Gfqi):
    """User-supplied S(q, e) with declared quadratic form and support radius."""

    kind = "primitive"

    def __init__(self, func: Callable, Q: QuadraticForm, support_radius: float, grad: Optional[Callable] = None,
                 label="function", dev_samples: int = 20000, seed: int = 0):
        self.func = func
        self.grad_func = grad
        rho = float(support_radius)
        rng = np.random.default_rng(seed)
        qs = rng.random(dev_samples)
        es = rng.uniform(-rho - 1, rho + 1, size=(dev_samples, Q.dim))
        d = np.asarray(func(qs, es)) - Q(es)
        super().__init__(Q, core=(rho,) * Q.dim, support=(rho,) * Q.dim,
                         dev=(float(d.min()) - 1e-3, float(d.max()) + 1e-3), label=label)

    def _eval(self, q, e):
        s = np.asarray(self.func(q, e), dtype=float)
        if self.grad_func is not None:
            dq, de = self.grad_func(q, e)
            return s, np.asarray(dq, dtype=float), np.asarray(de, dtype=float).reshape(e.shape)
        dq = (self.func(q + FD_STEP, e) - self.func(q - FD_STEP, e)) / (2 * FD_STEP)
        de = np.empty_like(e)
        for j in range(e.shape[1]):
            step = np.zeros(e.shape[1])
            step[j] = FD_STEP
            de[:, j] = (self.func(q, e + step) - self.func(q, e - step)) / (2 * FD_STEP)
        return s, dq, de


class SumGfqi(Gfqi):
    """Fiberwise sum S(q,e) + sign * S'(q,e'), generating L + L' or L - L'."""

    def __init__(self, a: Gfqi, b: Gfqi, sign: int):
        if sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        Qb = b.Q if sign > 0 else b.Q.negated()
        devb = b.dev if sign > 0 else (-b.dev[1], -b.dev[0])
        super().__init__(a.Q.direct_sum(Qb), core=a.core + b.core, support=a.support + b.support,
                         dev=(a.dev[0] + devb[0], a.dev[1] + devb[1]), parents=(a, b))
        self.a, self.b, self.sign = a, b, sign
        self.kind = "oplus" if sign > 0 else "ominus"

    def _eval(self, q, e):
        da = self.a.dim
        sa, qa, ea = self.a._eval(q, e[:, :da])
        sb, qb, eb = self.b._eval(q, e[:, da:])
        s = self.sign
        return sa + s * sb, qa + s * qb, np.concatenate([ea, s * eb], axis=1)


class NegatedGfqi(Gfqi):
    kind = "negate"

    def __init__(self, a: Gfqi):
        super().__init__(a.Q.negated(), core=a.core, support=a.support, dev=(-a.dev[1], -a.dev[0]), parents=(a,))
        self.a = a

    def _eval(self, q, e):
        s, dq, de = self.a._eval(q, e)
        return -s, -dq, -de


# --------------------------------------------------------------------------- constructors


def zero_section() -> Gfqi:
    """The zero section O with no fiber variables (S = 0)."""
    return QuadraticPlusBase(PeriodicFunction.constant(0.0), QuadraticForm(()), label="zero")


def graphical_gfqi(v: PeriodicFunction) -> Gfqi:
    """S(q) = v(q) with no fiber variables, generating j^1 v."""
    return QuadraticPlusBase(v, QuadraticForm(()), label=v.label)


def gfqi_from_base_function(f, df: Optional[Callable] = None, label: str = "f") -> Gfqi:
    """S(q, e) = f(q) + e^2, generating the 1-jet j^1 f with one stabilizing fiber variable."""
    g = f if isinstance(f, PeriodicFunction) else PeriodicFunction(f, df, label=label)
    return QuadraticPlusBase(g, QuadraticForm((1.0,)), label=g.label)


def pure_quadratic(Q: QuadraticForm) -> Gfqi:
    return QuadraticPlusBase(PeriodicFunction.constant(0.0), Q, label="Q")


def oplus(S: Gfqi, Sp: Gfqi) -> Gfqi:
    return SumGfqi(S, Sp, +1)


def ominus(S: Gfqi, Sp: Gfqi) -> Gfqi:
    return SumGfqi(S, Sp, -1)


def negate(S: Gfqi) -> Gfqi:
    return NegatedGfqi(S)


def stabilize(S: Gfqi, Qp: QuadraticForm) -> Gfqi:
    if not isinstance(Qp, QuadraticForm):
        Qp = QuadraticForm(tuple(Qp))
    if Qp.dim == 0:
        raise ValueError("stabilizing form must have positive dimension")
    out = SumGfqi(S, pure_quadratic(Qp), +1)
    out.kind = "stabilize"
    return out


def shift_by_function(S: Gfqi, f: PeriodicFunction) -> Gfqi:
    """S + f(q), generating T_f(L) without adding fiber variables."""
    out = SumGfqi(S, graphical_gfqi(f), +1)
    out.kind = "translate"
    return out


def qi_residual(S: Gfqi, samples: int = 100, seed: int = 0, margin: float = 0.5) -> float:
    """Sampled departure of S - Q from a q-only function outside the support box.

    For random q and pairs of fiber points with |e|_inf beyond the support
    radius on every axis, returns max |(S-Q)(q,e) - (S-Q)(q,e')|.
    """
    rng = np.random.default_rng(seed)
    d = S.dim
    if d == 0:
        return 0.0
    rad = np.array(S.support) + margin
    q = rng.random(samples)

    def outside():
        sgn = rng.choice([-1.0, 1.0], size=(samples, d))
        return sgn * (rad + rng.uniform(0.0, 3.0, size=(samples, d)))

    e1, e2 = outside(), outside()
    r1 = S(q, e1) - S.Q(e1)
    r2 = S(q, e2) - S.Q(e2)
    return float(np.max(np.abs(r1 - r2)))


# --------------------------------------------------------------------------- fronts


@dataclass
class LegendrianFront:
    """Point cloud (q, p, z) over the circle, grouped into ordered branches.

    `points` has shape (M, 3); `branch` labels each point; points of one branch
    are stored consecutively in order. `closed[b]` marks branches that wrap
    around the circle and close up.
    """

    points: np.ndarray
    branch: np.ndarray
    closed: dict = field(default_factory=dict)
    tol_leg: float = 1e-2

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.branch = np.asarray(self.branch, dtype=int).reshape(-1)
        if self.points.shape[0] != self.branch.shape[0]:
            raise ValueError("branch labels must match point count")

    @property
    def q(self):
        return self.points[:, 0]

    @property
    def p(self):
        return self.points[:, 1]

    @property
    def z(self):
        return self.points[:, 2]

    def branches(self):
        for b in np.unique(self.branch):
            idx = np.flatnonzero(self.branch == b)
            yield int(b), self.points[idx], bool(self.closed.get(int(b), False))

    def polylines(self, max_step: float) -> np.ndarray:
        """Dense samples along every branch in lifted coordinates, for distance queries."""
        out = []
        for _, pts, closed in self.branches():
            P = unwrap_branch(pts)
            if closed and len(P) > 1:
                last = P[0].copy()
                last[0] += np.round(P[-1, 0] - P[0, 0])
                P = np.vstack([P, last])
            out.append(densify(P, max_step))
        return np.vstack(out) if out else np.zeros((0, 3))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["q", "p", "z", "branch"])
            for (q, p, z), b in zip(self.points, self.branch):
                w.writerow([repr(float(q)), repr(float(p)), repr(float(z)), int(b)])


def unwrap_branch(pts: np.ndarray) -> np.ndarray:
    P = np.array(pts, dtype=float)
    if len(P) > 1:
        P[:, 0] = np.unwrap(P[:, 0], period=1.0)
    return P


def densify(P: np.ndarray, max_step: float) -> np.ndarray:
    if len(P) < 2:
        return P
    seg = np.diff(P, axis=0)
    L = np.linalg.norm(seg, axis=1)
    k = np.maximum(1, np.ceil(L / max_step).astype(int))
    parts = [P[i] + np.outer(np.arange(k[i]) / k[i], seg[i]) for i in range(len(seg))]
    parts.append(P[-1:])
    return np.vstack(parts)


def legendrian_defect(front: LegendrianFront) -> float:
    """Max over consecutive points of |dz + pbar dq| divided by the chord length."""
    worst = 0.0
    for _, pts, closed in front.branches():
        P = unwrap_branch(pts)
        if closed and len(P) > 2:
            nxt = P[0].copy()
            nxt[0] += np.round(P[-1, 0] - P[0, 0])
            P = np.vstack([P, nxt])
        if len(P) < 2:
            continue
        d = np.diff(P, axis=0)
        pbar = 0.5 * (P[1:, 1] + P[:-1, 1])
        chord = np.linalg.norm(d, axis=1)
        ok = chord > 1e-14
        if np.any(ok):
            worst = max(worst, float(np.max(np.abs(d[ok, 2] + pbar[ok] * d[ok, 0]) / chord[ok])))
    return worst


def hausdorff_distance(a: LegendrianFront, b: LegendrianFront, max_step: float) -> float:
    """Symmetric Hausdorff distance in (q, p, z) with q taken on the circle."""
    A = a.polylines(max_step)
    B = b.polylines(max_step)
    if len(A) == 0 or len(B) == 0:
        return np.inf
    A = A.copy()
    B = B.copy()
    A[:, 0] = np.mod(A[:, 0], 1.0)
    B[:, 0] = np.mod(B[:, 0], 1.0)
    Bx = np.vstack([B + [s, 0, 0] for s in (-1.0, 0.0, 1.0)])
    Ax = np.vstack([A + [s, 0, 0] for s in (-1.0, 0.0, 1.0)])
    dab = cKDTree(Bx).query(A)[0].max()
    dba = cKDTree(Ax).query(B)[0].max()
    return float(max(dab, dba))


# --------------------------------------------------------------------------- critical points


def _fiber_hessian(S: Gfqi, q, e, h=FD_STEP):
    d = e.shape[1]
    H = np.empty((e.shape[0], d, d))
    for j in range(d):
        step = np.zeros(d)
        step[j] = h
        gp = S.value_and_grad(q, e + step)[2]
        gm = S.value_and_grad(q, e - step)[2]
        H[:, :, j] = (gp - gm) / (2 * h)
    return 0.5 * (H + np.transpose(H, (0, 2, 1)))


def _newton_fiber(S: Gfqi, q, e, iters=30, tol=TOL_CRIT * 1e-3):
    e = e.copy()
    for _ in range(iters):
        g = S.value_and_grad(q, e)[2]
        nrm = np.linalg.norm(g, axis=1)
        active = nrm > tol
        if not np.any(active):
            break
        H = _fiber_hessian(S, q[active], e[active])
        step = np.array([np.linalg.lstsq(Hi, gi, rcond=1e-10)[0] for Hi, gi in zip(H, g[active])])
        # damping: halve the step until the gradient norm decreases
        lam = np.ones(step.shape[0])
        ea = e[active]
        for _ in range(8):
            trial = ea - lam[:, None] * step
            gn = np.linalg.norm(S.value_and_grad(q[active], trial)[2], axis=1)
            bad = gn > nrm[active]
            if not np.any(bad):
                break
            lam[bad] *= 0.5
        e[active] = ea - lam[:, None] * step
    return e


def _lattice_seeds(S: Gfqi, q: np.ndarray, radii, resolution: int):
    """Seeds at lattice points where |grad_e S|^2 is a local minimum over the 3^d neighbourhood."""
    d = S.dim
    axes = [np.linspace(-r, r, resolution + 1) for r in radii]
    mesh = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    shape = (resolution + 1,) * d
    seeds_q, seeds_e = [], []
    for qi in np.atleast_1d(q):
        qq = np.full(mesh.shape[0], qi)
        g = S.value_and_grad(qq, mesh)[2]
        n2 = np.sum(g * g, axis=1).reshape(shape)
        pad = np.pad(n2, 1, mode="constant", constant_values=np.inf)
        is_min = np.ones(shape, dtype=bool)
        for off in np.ndindex(*(3,) * d):
            if all(o == 1 for o in off):
                continue
            sl = tuple(slice(o, o + s) for o, s in zip(off, shape))
            is_min &= n2 <= pad[sl]
        idx = np.flatnonzero(is_min.ravel())
        seeds_q.append(np.full(idx.size, qi))
        seeds_e.append(mesh[idx])
    return np.concatenate(seeds_q), np.concatenate(seeds_e, axis=0)


def _cluster_rows(x: np.ndarray, tol: float) -> np.ndarray:
    """Indices of representatives of clusters of rows within tol (greedy, deterministic)."""
    keep = []
    for i in range(x.shape[0]):
        if all(np.max(np.abs(x[i] - x[k])) > tol for k in keep):
            keep.append(i)
    return np.array(keep, dtype=int)


def default_radii(S: Gfqi, box_radius=None):
    if box_radius is None:
        return tuple(max(c, s) + 1.0 for c, s in zip(S.core, S.support))
    if np.isscalar(box_radius):
        return (float(box_radius),) * S.dim
    return tuple(float(r) for r in box_radius)


def fiber_critical_points(S: Gfqi, q: float, box_radius=None, resolution: int = 64, tol_crit: float = TOL_CRIT):
    """Fiber-critical points e with |d_e S(q, e)| <= tol_crit, sorted lexicographically."""
    pts = _fiber_critical_batch(S, np.array([float(q)]), box_radius, resolution, tol_crit)[0]
    if len(pts) == 0:
        raise RuntimeError(f"no fiber-critical point found at q={q}; the generating function is invalid")
    return pts


def _fiber_critical_batch(S: Gfqi, qs: np.ndarray, box_radius, resolution, tol_crit):
    d = S.dim
    if d == 0:
        return [np.zeros((1, 0)) for _ in qs]
    radii = default_radii(S, box_radius)
    if any(r < s + 1.0 - 1e-12 for r, s in zip(radii, S.support)):
        raise ValueError("box radius must exceed the support radius by at least 1")
    sq, se = _lattice_seeds(S, qs, radii, resolution)
    vals = S.value_and_grad(sq, se)[0]
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite generating function value at a lattice seed")
    se = _newton_fiber(S, sq, se)
    g = S.value_and_grad(sq, se)[2]
    ok = np.linalg.norm(g, axis=1) <= tol_crit
    spacing = 2 * max(radii) / resolution
    out = []
    for qi in qs:
        sel = ok & (sq == qi)
        E = se[sel]
        if E.shape[0]:
            E = E[_cluster_rows(E, max(1e-6, 1e-3 * spacing))]
            E = E[np.lexsort(E.T[::-1])]
        out.append(E)
    return out


def wavefront(S: Gfqi, grid: CircleGrid, box_radius=None, resolution: int = 64, tol_crit: float = TOL_CRIT,
              tol_leg: float = 1e-2) -> LegendrianFront:
    """Front i_S(Sigma_S) = {(q, -dS/dq, S)} assembled over the grid, linked into branches."""
    qs = grid.points
    crit = _fiber_critical_batch(S, qs, box_radius, resolution, tol_crit)
    if S.dim:
        spacing = 2 * max(default_radii(S, box_radius)) / resolution
        crit = _continue_layers(S, qs, crit, tol_crit, spacing)
        qs, crit = _refine_folds(S, qs, crit, tol_crit, spacing)
    for qi, E in zip(qs, crit):
        if E.shape[0] == 0:
            raise RuntimeError(f"no fiber-critical point found at q={qi}")
    layers = []
    for qi, E in zip(qs, crit):
        val, dq, _ = S.value_and_grad(np.full(E.shape[0], qi), E)
        layers.append((E, np.stack([np.full(E.shape[0], qi), -dq, val], axis=1)))
    return _link_layers(layers, tol_leg)


def _continue_layers(S: Gfqi, qs, crit, tol_crit, spacing, sweeps: int = 3):
    """Carry critical points along q: sequential forward and backward passes around the circle."""
    n = len(qs)
    tol = max(1e-6, 1e-3 * spacing)
    crit = list(crit)
    for _ in range(sweeps):
        added = 0
        for order in (range(1, n + 1), range(n - 2, -n - 2, -1)):
            for k in order:
                i, prev = k % n, (k - 1) % n if order.step > 0 else (k + 1) % n
                if not crit[prev].shape[0]:
                    continue
                if crit[i].shape[0] >= crit[prev].shape[0] and _covered(crit[prev], crit[i], 0.1 * spacing):
                    continue
                new = _crit_from_seeds(S, qs[i], (crit[prev],), tol_crit, tol)
                if not new.shape[0]:
                    continue
                E = np.vstack([crit[i], new]) if crit[i].shape[0] else new
                E = E[_cluster_rows(E, tol)]
                if E.shape[0] > crit[i].shape[0]:
                    added += E.shape[0] - crit[i].shape[0]
                    crit[i] = E[np.lexsort(E.T[::-1])]
        if not added:
            break
    return crit


def _covered(A, B, r):
    """Every row of A has a row of B within sup-distance r."""
    if not B.shape[0]:
        return False
    return bool(np.all(np.min(np.max(np.abs(A[:, None, :] - B[None, :, :]), axis=2), axis=1) <= r))


def _crit_from_seeds(S: Gfqi, q: float, seeds, tol_crit, tol):
    E = np.vstack([x for x in seeds if x.shape[0]])
    E = _newton_fiber(S, np.full(E.shape[0], q), E)
    ok = np.linalg.norm(S.value_and_grad(np.full(E.shape[0], q), E)[2], axis=1) <= tol_crit
    E = E[ok]
    if E.shape[0]:
        E = E[_cluster_rows(E, tol)]
        E = E[np.lexsort(E.T[::-1])]
    return E


def _refine_folds(S: Gfqi, qs, crit, tol_crit, spacing, depth: int = 12):
    """Bisect grid cells where the number of critical points changes, so fold regions are sampled densely."""
    n = len(qs)
    tol = max(1e-6, 1e-3 * spacing)
    out_q, out_c = [], []
    step = qs[1] - qs[0] if n > 1 else 1.0
    for i in range(n):
        out_q.append(qs[i])
        out_c.append(crit[i])
        j = (i + 1) % n
        if crit[i].shape[0] == crit[j].shape[0]:
            continue
        a, b = qs[i], qs[i] + step
        Ea, Eb = crit[i], crit[j]
        extra = []
        for _ in range(depth):
            m = 0.5 * (a + b)
            Em = _crit_from_seeds(S, m, (Ea, Eb), tol_crit, tol)
            extra.append((m, Em))
            if Em.shape[0] == Ea.shape[0]:
                a, Ea = m, Em
            else:
                b, Eb = m, Em
        for m, Em in sorted(extra, key=lambda t: t[0]):
            if Em.shape[0]:
                out_q.append(m)
                out_c.append(Em)
    return np.array(out_q), out_c


def _link_layers(layers, tol_leg):
    """Greedy nearest-neighbour continuation of per-q critical points into branches."""
    n = len(layers)
    next_id = 0
    ids = []
    prev_ids = None
    for i, (E, P) in enumerate(layers):
        cur = -np.ones(E.shape[0], dtype=int)
        if prev_ids is not None and E.shape[0] and layers[i - 1][0].shape[0]:
            Ep, Pp = layers[i - 1]
            cost = np.abs(P[:, None, 1:] - Pp[None, :, 1:]).sum(axis=2) + np.abs(E[:, None, :] - Ep[None, :, :]).sum(axis=2)
            used = set()
            for flat in np.argsort(cost, axis=None, kind="stable"):
                a, b = divmod(int(flat), cost.shape[1])
                if cur[a] >= 0 or b in used:
                    continue
                cur[a] = prev_ids[b]
                used.add(b)
        for a in range(E.shape[0]):
            if cur[a] < 0:
                cur[a] = next_id
                next_id += 1
        ids.append(cur)
        prev_ids = cur
    pts = np.vstack([P for _, P in layers])
    br = np.concatenate(ids)
    # join branches across the seam q = 1 ~ q = 0
    nxt = {}
    if n > 1 and layers[0][0].shape[0] and layers[-1][0].shape[0]:
        (E0, P0), (E1, P1) = layers[0], layers[-1]
        P0s = P0.copy()
        P0s[:, 0] += 1.0
        cost = np.abs(P1[:, None, :] - P0s[None, :, :]).sum(axis=2) + np.abs(E1[:, None, :] - E0[None, :, :]).sum(axis=2)
        used = set()
        done = set()
        for flat in np.argsort(cost, axis=None, kind="stable"):
            a, b = divmod(int(flat), cost.shape[1])
            if a in done or b in used:
                continue
            nxt[int(ids[-1][a])] = int(ids[0][b])
            done.add(a)
            used.add(b)
    position = np.arange(len(br))
    chains, seen = [], set()
    starts = [b for b in dict.fromkeys(br.tolist()) if b not in nxt.values()]
    for b0 in starts + [b for b in dict.fromkeys(br.tolist())]:
        if b0 in seen:
            continue
        chain = [b0]
        seen.add(b0)
        while chain[-1] in nxt and nxt[chain[-1]] not in seen:
            chain.append(nxt[chain[-1]])
            seen.add(chain[-1])
        closed_chain = chain[-1] in nxt and nxt[chain[-1]] == chain[0]
        chains.append((chain, closed_chain))
    out_pts, out_br, closed = [], [], {}
    for k, (chain, is_closed) in enumerate(chains):
        for j, b in enumerate(chain):
            idx = position[br == b]
            P = pts[idx].copy()
            P[:, 0] += j  # later pieces continue past the seam
            out_pts.append(P)
            out_br.append(np.full(len(idx), k))
        closed[k] = bool(is_closed)
    pts = np.vstack(out_pts)
    pts[:, 0] = np.mod(pts[:, 0], 1.0)
    return LegendrianFront(pts, np.concatenate(out_br), closed, tol_leg)


def front_from_samples(q, p, z, tol_leg=1e-2, closed=True) -> LegendrianFront:
    """Single ordered closed branch from parametrized samples."""
    pts = np.stack([np.mod(q, 1.0), p, z], axis=1)
    return LegendrianFront(pts, np.zeros(len(pts), dtype=int), {0: closed}, tol_leg)


# --------------------------------------------------------------------------- spectrum


def _full_newton(S: Gfqi, q, e, iters=30, tol=TOL_CRIT * 1e-3, h=FD_STEP):
    d = S.dim
    x = np.concatenate([q[:, None], e], axis=1)

    def grad(xx):
        _, gq, ge = S.value_and_grad(xx[:, 0], xx[:, 1:])
        return np.concatenate([gq[:, None], ge], axis=1)

    for _ in range(iters):
        g = grad(x)
        nrm = np.linalg.norm(g, axis=1)
        act = nrm > tol
        if not np.any(act):
            break
        xa = x[act]
        H = np.empty((xa.shape[0], d + 1, d + 1))
        for j in range(d + 1):
            st = np.zeros(d + 1)
            st[j] = h
            H[:, :, j] = (grad(xa + st) - grad(xa - st)) / (2 * h)
        H = 0.5 * (H + np.transpose(H, (0, 2, 1)))
        step = np.array([np.linalg.lstsq(Hi, gi, rcond=1e-10)[0] for Hi, gi in zip(H, g[act])])
        lam = np.ones(step.shape[0])
        for _ in range(8):
            gn = np.linalg.norm(grad(xa - lam[:, None] * step), axis=1)
            bad = gn > nrm[act]
            if not np.any(bad):
                break
            lam[bad] *= 0.5
        x[act] = xa - lam[:, None] * step
    return x


@dataclass
class SpectrumResult:
    values: np.ndarray
    points: np.ndarray
    tol_cluster: float

    def to_json(self):
        return json.dumps([float(v) for v in self.values])


def spectrum(S: Gfqi, grid: CircleGrid, box_radius=None, resolution: int = 64, tol_crit: float = TOL_CRIT,
             tol_cluster: Optional[float] = None, front: Optional[LegendrianFront] = None) -> SpectrumResult:
    """Critical values of S, seeded where dS/dq changes sign along the front and refined by Newton."""
    if front is None:
        front = wavefront(S, grid, box_radius, resolution, tol_crit)
    seeds_q, seeds_e = _spectrum_seeds(S, front, grid, box_radius, resolution, tol_crit)
    if len(seeds_q) == 0:
        return SpectrumResult(np.zeros(0), np.zeros((0, S.dim + 1)), 0.0)
    x = _full_newton(S, seeds_q, seeds_e)
    val, gq, ge = S.value_and_grad(x[:, 0], x[:, 1:])
    gnorm = np.sqrt(gq ** 2 + np.sum(ge ** 2, axis=1))
    ok = gnorm <= tol_crit
    x, val = x[ok], val[ok]
    if tol_cluster is None:
        tol_cluster = default_tol_cluster(front, grid)
    order = np.argsort(val, kind="stable")
    x, val = x[order], val[order]
    reps_v, reps_x = [], []
    for v, pt in zip(val, x):
        if not reps_v or v - reps_v[-1][-1] > tol_cluster:
            reps_v.append([v])
            reps_x.append(pt)
        else:
            reps_v[-1].append(v)
    values = np.array([float(np.mean(c)) for c in reps_v])
    return SpectrumResult(values, np.array(reps_x).reshape(-1, S.dim + 1), tol_cluster)


def critical_spectrum(S: Gfqi, grid: CircleGrid, box_radius=None, resolution: int = 32, tol_crit: float = TOL_CRIT,
                      tol_cluster: float = 1e-6):
    """Critical values of S from a joint (q, e) lattice search, plus max|dS/dq| near the fiber-critical set.

    Seeds are lattice minima of |grad S|^2 over the 3^(d+1) neighbourhood (periodic in q),
    refined by Newton in all variables.
    """
    d = S.dim
    radii = default_radii(S, box_radius)
    axes = [np.linspace(-r, r, resolution + 1) for r in radii]
    mesh = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    qs = grid.points
    shape = (len(qs),) + (resolution + 1,) * d
    Q = np.repeat(qs, mesh.shape[0])
    E = np.tile(mesh, (len(qs), 1))
    _, gq, ge = S.value_and_grad(Q, E)
    n2 = (gq ** 2 + np.sum(ge ** 2, axis=1)).reshape(shape)
    h = 2 * np.asarray(radii) / resolution
    near = np.linalg.norm(ge, axis=1) <= 2.0 * np.max(np.abs(S.Q.array)) * float(np.max(h)) * np.sqrt(d)
    pmax = float(np.max(np.abs(gq[near]))) if np.any(near) else float(np.max(np.abs(gq)))
    pad = np.pad(n2, [(1, 1)] + [(1, 1)] * d, mode="constant", constant_values=np.inf)
    pad[0] = pad[-2]
    pad[-1] = pad[1]
    is_min = np.ones(shape, dtype=bool)
    for off in np.ndindex(*(3,) * (d + 1)):
        if all(o == 1 for o in off):
            continue
        sl = tuple(slice(o, o + k) for o, k in zip(off, shape))
        is_min &= n2 <= pad[sl]
    idx = np.flatnonzero(is_min.ravel())
    if idx.size == 0:
        return SpectrumResult(np.zeros(0), np.zeros((0, d + 1)), tol_cluster), pmax
    x = _full_newton(S, Q[idx], E[idx])
    val, gq2, ge2 = S.value_and_grad(x[:, 0], x[:, 1:])
    ok = np.sqrt(gq2 ** 2 + np.sum(ge2 ** 2, axis=1)) <= tol_crit
    x, val = x[ok], val[ok]
    order = np.argsort(val, kind="stable")
    reps_v, reps_x = [], []
    for v, pt in zip(val[order], x[order]):
        if not reps_v or v - reps_v[-1][-1] > tol_cluster:
            reps_v.append([v])
            reps_x.append(pt)
        else:
            reps_v[-1].append(v)
    values = np.array([float(np.mean(c)) for c in reps_v])
    return SpectrumResult(values, np.array(reps_x).reshape(-1, d + 1), tol_cluster), pmax


def default_tol_cluster(front: LegendrianFront, grid: CircleGrid) -> float:
    pmax = float(np.max(np.abs(front.p))) if len(front.p) else 0.0
    return max(3.0 * pmax * grid.spacing ** 2, 1e-6)


def _spectrum_seeds(S, front, grid, box_radius, resolution, tol_crit):
    """Front points at sign changes or near-zeros of p, with their fiber coordinates recovered."""
    qs, es = [], []
    seen_q = []
    for _, pts, closed in front.branches():
        p = pts[:, 1]
        m = len(p)
        cand = set()
        for i in range(m):
            j = i + 1
            if j >= m:
                if not closed:
                    break
                j = 0
            if p[i] == 0.0 or p[i] * p[j] < 0:
                cand.add(i)
                cand.add(j)
        small = np.abs(p) <= max(tol_crit, 1e-9) * 10
        cand.update(np.flatnonzero(small).tolist())
        for i in range(1, m - 1):
            if abs(p[i]) <= abs(p[i - 1]) and abs(p[i]) <= abs(p[i + 1]):
                cand.add(i)
        seen_q.extend(float(pts[i, 0]) for i in sorted(cand))
    if not seen_q:
        return np.zeros(0), np.zeros((0, S.dim))
    uq = np.unique(np.round(np.array(seen_q), 12))
    crit = _fiber_critical_batch(S, uq, box_radius, resolution, tol_crit)
    for qi, E in zip(uq, crit):
        for e in E:
            qs.append(qi)
            es.append(e)
    return np.array(qs), np.array(es).reshape(len(qs), S.dim)
