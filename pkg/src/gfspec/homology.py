"""Relative persistent homology of generating-function sublevel sets over Z/2.

The sublevel filtration of S on S^1 x box is modelled by the lower-star
filtration of a cubical lattice (periodic along q). Cells at or below the
negative-end level b are deleted, which computes homology relative to {S <= b}.
The spectral pair (l_-, l_+) is read off from the births of the two essential
classes, in degrees d_- and d_- + 1.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ._reduction import gf2_rank, reduce_boundary
import itertools

from .genfun import TOL_CRIT, Gfqi, LegendrianFront, _full_newton, critical_spectrum, spectrum, wavefront
from .grid import CircleGrid

CELL_CAP = 50_000_000


# --------------------------------------------------------------------------- complexes


@dataclass
class CubicalFiltration:
    """Quotient cubical complex in filtration order.

    `values[k]`, `dims[k]` describe the k-th unmasked cell; its boundary is
    `col_idx[col_ptr[k]:col_ptr[k+1]]` (positions of unmasked faces, ascending).
    """

    values: np.ndarray
    dims: np.ndarray
    col_ptr: np.ndarray
    col_idx: np.ndarray
    b: float
    n_masked: int
    shape: tuple
    periodic: tuple
    radii: tuple = ()
    min_value: float = np.nan
    apex: np.ndarray = field(default=None, repr=False)

    @property
    def n_cells(self) -> int:
        return int(self.values.size)

    @property
    def maxdim(self) -> int:
        return len(self.shape)

    def boundary(self, k: int) -> np.ndarray:
        return self.col_idx[self.col_ptr[k]:self.col_ptr[k + 1]]


def count_cells(shape, periodic) -> int:
    total = 1
    for s, per in zip(shape, periodic):
        total *= (2 * s) if per else (2 * s - 1)
    return total


def lattice_filtration(V: np.ndarray, periodic, b: float = -np.inf, cap: int = CELL_CAP) -> CubicalFiltration:
    """Lower-star filtration of the cubical lattice carrying vertex values V.

    Axes flagged periodic wrap around (and need at least 3 vertices). Cells
    whose value is <= b are deleted. Ties are broken by dimension and then by
    lexicographic cell index (mask-major, then C order of the base vertex).
    """
    V = np.asarray(V, dtype=float)
    periodic = tuple(bool(p) for p in periodic)
    k = V.ndim
    if len(periodic) != k:
        raise ValueError("one periodic flag per axis is required")
    for s, per in zip(V.shape, periodic):
        if per and s < 3:
            raise ValueError("periodic axes need at least 3 vertices")
        if s < 1:
            raise ValueError("empty axis")
    total = count_cells(V.shape, periodic)
    if total > cap:
        raise ValueError(f"cell count {total} exceeds cap {cap}; lower the resolution")

    shapes, offsets, vals, dims, apexes = [], [], [], [], []
    vertex_ids = np.arange(V.size, dtype=np.int64).reshape(V.shape)
    off = 0
    for mask in range(1 << k):
        shp = tuple(s if (per or not (mask >> a) & 1) else s - 1 for a, (s, per) in enumerate(zip(V.shape, periodic)))
        X, A = V, vertex_ids
        for a in range(k):
            if (mask >> a) & 1:
                if periodic[a]:
                    X0, A0, X1, A1 = X, A, np.roll(X, -1, axis=a), np.roll(A, -1, axis=a)
                else:
                    lo = [slice(None)] * k
                    hi = [slice(None)] * k
                    lo[a] = slice(0, -1)
                    hi[a] = slice(1, None)
                    X0, A0, X1, A1 = X[tuple(lo)], A[tuple(lo)], X[tuple(hi)], A[tuple(hi)]
                up = X1 > X0
                X, A = np.where(up, X1, X0), np.where(up, A1, A0)
        if min(shp, default=1) <= 0:
            shapes.append(shp)
            offsets.append(off)
            continue
        shapes.append(shp)
        offsets.append(off)
        vals.append(X.ravel())
        apexes.append(A.ravel())
        dims.append(np.full(X.size, bin(mask).count("1"), dtype=np.int8))
        off += X.size
    values = np.concatenate(vals)
    dims = np.concatenate(dims)
    apex = np.concatenate(apexes)

    cell_ids, face_ids = [], []
    for mask in range(1 << k):
        shp = shapes[mask]
        if min(shp, default=1) <= 0 or mask == 0:
            continue
        cnt = int(np.prod(shp))
        ids = offsets[mask] + np.arange(cnt, dtype=np.int64)
        idx = np.indices(shp).reshape(k, -1)
        for a in range(k):
            if not (mask >> a) & 1:
                continue
            fmask = mask ^ (1 << a)
            fshp = shapes[fmask]
            for shift in (0, 1):
                fidx = idx.copy()
                if shift:
                    fidx[a] += 1
                    if periodic[a]:
                        fidx[a] %= V.shape[a]
                cell_ids.append(ids)
                face_ids.append(offsets[fmask] + np.ravel_multi_index(fidx, fshp))
    keep = values > b
    n_masked = int(np.count_nonzero(~keep))
    order = np.lexsort((np.arange(values.size), dims, values))
    order = order[keep[order]]
    pos = np.full(values.size, -1, dtype=np.int64)
    pos[order] = np.arange(order.size)
    if cell_ids:
        c = pos[np.concatenate(cell_ids)]
        f = pos[np.concatenate(face_ids)]
        ok = (c >= 0) & (f >= 0)
        c, f = c[ok], f[ok]
        srt = np.lexsort((f, c))
        c, f = c[srt], f[srt]
        # faces may repeat on tiny periodic axes; cancel pairs mod 2
        if c.size:
            dup = np.zeros(c.size, dtype=bool)
            same = (c[1:] == c[:-1]) & (f[1:] == f[:-1])
            if np.any(same):
                run_start = np.r_[True, ~same]
                grp = np.cumsum(run_start) - 1
                counts = np.bincount(grp)
                odd = counts[grp] % 2 == 1
                dup = ~(run_start & odd)
                c, f = c[~dup], f[~dup]
        col_ptr = np.zeros(order.size + 1, dtype=np.int64)
        np.add.at(col_ptr, c + 1, 1)
        col_ptr = np.cumsum(col_ptr)
        col_idx = f.astype(np.int64)
    else:
        col_ptr = np.zeros(order.size + 1, dtype=np.int64)
        col_idx = np.zeros(0, dtype=np.int64)
    return CubicalFiltration(values[order], dims[order].astype(np.int64), col_ptr, col_idx, float(b), n_masked,
                             tuple(V.shape), periodic, min_value=float(V.min()), apex=apex[order])


# --------------------------------------------------------------------------- reduction


@dataclass
class PersistenceResult:
    finite: np.ndarray
    essential: np.ndarray
    stats: dict = field(default_factory=dict)
    essential_cells: np.ndarray = field(default=None, repr=False)

    def essential_in_degree(self, deg: int) -> np.ndarray:
        if self.essential.size == 0:
            return np.zeros(0)
        return self.essential[self.essential[:, 1] == deg, 0]

    def to_json(self, drop_zero_length: bool = True) -> str:
        fin = self.finite
        if drop_zero_length and fin.size:
            fin = fin[fin[:, 1] > fin[:, 0]]
        doc = {"finite": [[float(b), float(d), int(k)] for b, d, k in fin],
               "essential": [[float(b), int(k)] for b, k in self.essential],
               "stats": self.stats}
        return json.dumps(doc, sort_keys=True)


def reduce(filtration: CubicalFiltration) -> PersistenceResult:
    """Pairs and essential classes of the quotient complex."""
    t0 = time.perf_counter()
    low, owner, ops = reduce_boundary(filtration.col_ptr, filtration.col_idx, filtration.dims,
                                      max(filtration.maxdim, 1))
    elapsed = time.perf_counter() - t0
    v = filtration.values
    cols = np.flatnonzero(low >= 0)
    rows = low[cols]
    finite = np.stack([v[rows], v[cols], filtration.dims[rows].astype(float)], axis=1) if cols.size else np.zeros((0, 3))
    ess = np.flatnonzero((low < 0) & (owner < 0))
    essential = np.stack([v[ess], filtration.dims[ess].astype(float)], axis=1) if ess.size else np.zeros((0, 2))
    stats = {"cells": filtration.n_cells, "masked": filtration.n_masked, "column_additions": int(ops),
             "pairs": int(cols.size), "seconds": round(elapsed, 6)}
    return PersistenceResult(finite, essential, stats, ess)


# --------------------------------------------------------------------------- brute-force oracle


def boundary_matrix(filtration: CubicalFiltration) -> np.ndarray:
    N = filtration.n_cells
    D = np.zeros((N, N), dtype=np.uint8)
    for k in range(N):
        D[filtration.boundary(k), k] = 1
    return D


def brute_relative_betti(filtration: CubicalFiltration, a: float, b: float) -> np.ndarray:
    """dim H_k(K_a, K_b) for value-sublevel complexes K_b within K_a, by direct ranks."""
    D = boundary_matrix(filtration)
    v = filtration.values
    sel = (v <= a) & (v > b)
    idx = np.flatnonzero(sel)
    dims = filtration.dims[idx]
    maxd = filtration.maxdim
    betti = np.zeros(maxd + 1, dtype=int)
    ranks = np.zeros(maxd + 2, dtype=int)
    for k in range(1, maxd + 1):
        rk = idx[dims == k]
        rows = idx[dims == k - 1]
        if rk.size and rows.size:
            ranks[k] = gf2_rank(np.ascontiguousarray(D[np.ix_(rows, rk)]))
    for k in range(maxd + 1):
        betti[k] = int(np.count_nonzero(dims == k)) - ranks[k] - ranks[k + 1]
    return betti


def barcode_relative_betti(result: PersistenceResult, maxdim: int, a: float, b: float) -> np.ndarray:
    """dim H_k(K_a, K_b) from the barcode via the long exact sequence of the pair.

    coker(H_k(K_b) -> H_k(K_a)) counts degree-k bars born in (b, a] alive at a;
    ker(H_{k-1}(K_b) -> H_{k-1}(K_a)) counts degree-(k-1) bars alive at b dying in (b, a].
    """
    betti = np.zeros(maxdim + 1, dtype=int)
    bars = [(bi, de, int(k)) for bi, de, k in result.finite] + [(bi, np.inf, int(k)) for bi, k in result.essential]
    for bi, de, k in bars:
        if b < bi <= a < de:
            betti[k] += 1
        if bi <= b < de <= a and k + 1 <= maxdim:
            betti[k + 1] += 1
    return betti


def random_lattice_filtration(rng: np.random.Generator, max_cells: int = 300, levels: int = 8) -> CubicalFiltration:
    """Small random lower-star cubical filtration with integer vertex values and a random negative end."""
    while True:
        k = int(rng.integers(1, 4))
        shape = tuple(int(rng.integers(2, 6)) for _ in range(k))
        periodic = tuple(bool(rng.integers(0, 2)) and s >= 3 for s in shape)
        if count_cells(shape, periodic) <= max_cells:
            break
    V = rng.integers(0, levels, size=shape).astype(float)
    b = float(rng.integers(-1, levels // 2)) if rng.random() < 0.6 else -np.inf
    return lattice_filtration(V, periodic, b)


# --------------------------------------------------------------------------- box planning


@dataclass(frozen=True)
class BoxPlan:
    radii: tuple
    b: Optional[float]
    margin: float


def plan_box(S: Gfqi, margin: float = 1.0) -> BoxPlan:
    """Truncation box and negative-end level for S.

    Every axis extends `margin` beyond the core and support radii. When the
    form has negative directions, b sits below every critical value reachable
    in the core box and the negative axes are stretched until every face
    stratum of the box lies below b.
    """
    c = S.Q.array
    base = [max(co, su) + margin for co, su in zip(S.core, S.support)]
    if S.index == 0:
        return BoxPlan(tuple(base), None, margin)
    lo, hi = S.dev
    neg = c < 0
    core = np.array(S.core)
    b = lo - float(np.sum(np.abs(c[neg]) * core[neg] ** 2)) - (hi - lo) - 1.0
    radii = []
    for j, r in enumerate(base):
        if neg[j]:
            r = max(r, float(np.sqrt((hi - b + 1.0) / abs(c[j]))))
        radii.append(r)
    return BoxPlan(tuple(radii), b, margin)


def check_box(S: Gfqi, grid: CircleGrid, radii, samples: int = 64, seed: int = 0, tol: float = 1e-9):
    """Reject boxes whose faces still see fiber-dependent deviation of S from Q.

    For random points on each face, pushing the face coordinate further out
    must leave S - Q unchanged. Returns None or a witness (q, e, jump).
    """
    if S.dim == 0:
        return None
    rng = np.random.default_rng(seed)
    R = np.asarray(radii)
    for j in range(S.dim):
        q = rng.choice(grid.points, samples)
        e = rng.uniform(-R, R, size=(samples, S.dim))
        e[:, j] = R[j] * rng.choice([-1.0, 1.0], samples)
        e2 = e.copy()
        e2[:, j] *= 1.5
        jump = np.abs((S(q, e) - S.Q(e)) - (S(q, e2) - S.Q(e2)))
        w = int(np.argmax(jump))
        if jump[w] > tol:
            return float(q[w]), e[w].tolist(), float(jump[w])
    return None


def build_filtration(S: Gfqi, grid: CircleGrid, box_radius=None, resolution: int = 64, b: Optional[float] = None,
                     d_max: int = 3, cap: int = CELL_CAP, margin: float = 1.0) -> CubicalFiltration:
    """Lower-star filtration of S on S^1 x prod_j [-R_j, R_j] with the negative end {S <= b} deleted."""
    if S.dim > d_max:
        raise ValueError(f"fiber dimension {S.dim} exceeds d_max={d_max}")
    plan = plan_box(S, margin)
    if box_radius is None:
        radii = plan.radii
    elif np.isscalar(box_radius):
        radii = (float(box_radius),) * S.dim
    else:
        radii = tuple(float(r) for r in box_radius)
    for r, s in zip(radii, S.support):
        if r < s + margin - 1e-12:
            raise ValueError(f"box radius {r} does not clear support radius {s} by margin {margin}")
    total = count_cells((grid.n,) + (resolution + 1,) * S.dim, (True,) + (False,) * S.dim)
    if total > cap:
        raise ValueError(f"cell count {total} exceeds cap {cap}; lower the resolution")
    witness = check_box(S, grid, radii)
    if witness is not None:
        raise ValueError(f"box radius too small: S - Q still varies on a face, witness {witness}")
    axes = [grid.points] + [np.linspace(-r, r, resolution + 1) for r in radii]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    vals = np.empty(pts.shape[0])
    chunk = 200_000
    for s0 in range(0, pts.shape[0], chunk):
        vals[s0:s0 + chunk] = S(pts[s0:s0 + chunk, 0], pts[s0:s0 + chunk, 1:])
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite sample of the generating function")
    V = vals.reshape((grid.n,) + (resolution + 1,) * S.dim)
    if b is None:
        b = float(V.min()) - 1.0 if S.index == 0 else plan.b
    filt = lattice_filtration(V, (True,) + (False,) * S.dim, b, cap)
    filt.radii = tuple(radii)
    return filt


# --------------------------------------------------------------------------- spectral pair


@dataclass(frozen=True)
class SpectralConfig:
    """Numerical parameters for spectral_pair."""

    n: int = 256
    resolution: int = 64
    seed_resolution: Optional[int] = None
    margin: float = 1.0
    d_max: int = 3
    cap: int = CELL_CAP
    snap: bool = True
    refine: bool = True
    tol_spec: Optional[float] = None


@dataclass
class SpectralPair:
    ell_minus: float
    ell_plus: float
    raw_minus: float
    raw_plus: float
    tol_spec: float
    spectrum: list
    snapped: tuple
    essential: list
    persistence: PersistenceResult = field(repr=False, default=None)
    front: LegendrianFront = field(repr=False, default=None)
    diagnostics: dict = field(default_factory=dict)

    def __iter__(self):
        yield self.ell_minus
        yield self.ell_plus

    def summary(self) -> dict:
        return {"ell_minus": self.ell_minus, "ell_plus": self.ell_plus, "raw_minus": self.raw_minus,
                "raw_plus": self.raw_plus, "tol_spec": self.tol_spec, "spectrum": list(self.spectrum),
                "snapped": list(self.snapped), "diagnostics": self.diagnostics}


class EssentialCountError(RuntimeError):
    pass


def _seed_resolution(d: int, cfg: SpectralConfig) -> int:
    """Per-axis lattice for the critical-point search: about 3e5 joint (q, e) points."""
    if cfg.seed_resolution is not None:
        return cfg.seed_resolution
    if d == 0:
        return 64
    nq = min(cfg.n, 128)
    return int(min(128, max(8, (3e5 / nq) ** (1.0 / d) - 1)))


def estimate_tol_spec(S: Gfqi, pmax: float, grid: CircleGrid, radii, resolution: int) -> float:
    """First-order lattice error: 2 (max|p| h_q + sum_j 2|c_j| h_j^2) with p = -dS/dq on the front."""
    tol = pmax * grid.spacing
    if S.dim:
        h = 2 * np.asarray(radii) / resolution
        # fiber Hessian diagonal at a subsample of front points is dominated by |Q| away from folds
        tol += float(np.sum(2 * np.abs(S.Q.array) * h ** 2))
    return 2.0 * tol + 1e-9


def snap_to_spectrum(x: float, spec, tol: float):
    if len(spec) == 0:
        return x, False, np.inf
    spec = np.asarray(spec)
    k = int(np.argmin(np.abs(spec - x)))
    dist = float(abs(spec[k] - x))
    if dist <= tol:
        return float(spec[k]), True, dist
    return float(x), False, dist


def refine_birth(S: Gfqi, grid: CircleGrid, filt: CubicalFiltration, cell: int, raw: float,
                 tol_crit: float = TOL_CRIT, reach: int = 2, accept: float = 3.0):
    """Critical value of S behind the lattice birth carried by `cell`, or None.

    Newton is seeded on a cube of side 2 `reach` coarse steps around the cell's
    maximal vertex (the coarse step is the largest lattice spacing). A
    converged critical point is accepted if it lies within `accept` coarse
    steps of that vertex and its value is within the local Lipschitz error of
    `raw`.
    Returns (value, point, error bound).
    """
    d = S.dim
    idx = np.unravel_index(int(filt.apex[cell]), filt.shape)
    steps = [grid.spacing] + [2 * r / (filt.shape[j + 1] - 1) for j, r in enumerate(filt.radii)]
    steps = np.array(steps)
    axes = [grid.points] + [np.linspace(-r, r, filt.shape[j + 1]) for j, r in enumerate(filt.radii)]
    apex = np.array([axes[a][idx[a]] for a in range(d + 1)])
    H = float(np.max(steps))
    offs = np.array(list(itertools.product(range(-reach, reach + 1), repeat=d + 1)), dtype=float)
    seeds = apex + H * offs
    seeds[:, 0] %= 1.0
    _, gq0, ge0 = S.value_and_grad(seeds[:, 0], seeds[:, 1:])
    lip = float(np.max(np.sqrt(gq0 ** 2 + np.sum(ge0 ** 2, axis=1))))
    bound = lip * float(np.linalg.norm(steps)) + 1e-9
    x = _full_newton(S, seeds[:, 0].copy(), seeds[:, 1:].copy())
    val, gq, ge = S.value_and_grad(x[:, 0], x[:, 1:])
    ok = np.sqrt(gq ** 2 + np.sum(ge ** 2, axis=1)) <= tol_crit
    dx = x - apex
    dx[:, 0] = (dx[:, 0] + 0.5) % 1.0 - 0.5
    near = ok & (np.max(np.abs(dx), axis=1) <= accept * H) & (np.abs(val - raw) <= bound)
    if not np.any(near):
        return None
    k = np.flatnonzero(near)[np.argmin(np.abs(val[near] - raw))]
    return float(val[k]), x[k], bound


def spectral_pair(S: Gfqi, config: SpectralConfig = SpectralConfig(), box_radius=None, b=None,
                  with_spectrum: bool = True) -> SpectralPair:
    """(l_-, l_+): births of the essential classes in degrees d_- and d_- + 1.

    Raw lattice values are snapped to the nearest critical value of S within
    tol_spec (both are reported). Anything other than exactly two essential
    classes in those degrees raises EssentialCountError.
    """
    grid = CircleGrid(config.n)
    filt = build_filtration(S, grid, box_radius, config.resolution, b, config.d_max, config.cap, config.margin)
    res = reduce(filt)
    dm = S.index
    degs = sorted(int(k) for k in res.essential[:, 1]) if res.essential.size else []
    if degs != [dm, dm + 1]:
        raise EssentialCountError(
            f"expected essential classes in degrees {[dm, dm + 1]}, found {degs}; "
            f"check box radii {filt.radii}, b={filt.b}, resolution={config.resolution}")
    raw_m = float(res.essential_in_degree(dm)[0])
    raw_p = float(res.essential_in_degree(dm + 1)[0])
    cells = {int(k): int(c) for (x, k), c in zip(res.essential, res.essential_cells)}
    diag = {"cells": filt.n_cells, "masked": filt.n_masked, "b": filt.b, "radii": list(filt.radii),
            "reduction_seconds": res.stats["seconds"]}
    spec_vals, front, tol = [], None, config.tol_spec
    snapped = (False, False)
    lm, lp = raw_m, raw_p
    if with_spectrum:
        sres = _seed_resolution(S.dim, config)
        if S.dim == 0:
            front = wavefront(S, grid, None, sres)
            sp = spectrum(S, grid, None, sres, front=front)
            pmax = float(np.max(np.abs(front.p)))
        else:
            sp, pmax = critical_spectrum(S, CircleGrid(min(config.n, 128)), filt.radii, sres)
        spec_vals = [float(v) for v in sp.values]
        if tol is None:
            tol = estimate_tol_spec(S, pmax, grid, filt.radii, config.resolution)
        if config.snap:
            lm, sm, dmn = snap_to_spectrum(raw_m, spec_vals, tol)
            lp, sp_, dpl = snap_to_spectrum(raw_p, spec_vals, tol)
            methods = ["value" if sm else "none", "value" if sp_ else "none"]
            if config.refine:
                for j, (deg, raw) in enumerate(((dm, raw_m), (dm + 1, raw_p))):
                    r = refine_birth(S, grid, filt, cells[deg], raw)
                    if r is None:
                        continue
                    if j == 0:
                        lm, sm, dmn = r[0], True, abs(r[0] - raw)
                    else:
                        lp, sp_, dpl = r[0], True, abs(r[0] - raw)
                    methods[j] = "birth"
                    if r[0] not in spec_vals:
                        spec_vals.append(r[0])
            snapped = (sm, sp_)
            diag["snap_method"] = methods
            diag["snap_distance"] = [dmn, dpl]
            close = [v for v in spec_vals if abs(v - raw_m) <= tol or abs(v - raw_p) <= tol]
            diag["cluster_sizes"] = [sum(abs(v - raw_m) <= tol for v in spec_vals),
                                     sum(abs(v - raw_p) <= tol for v in spec_vals)]
            diag["candidates"] = close
    if tol is None:
        tol = 0.0
    if lm > lp:
        lm, lp = min(lm, lp), max(lm, lp)
    return SpectralPair(lm, lp, raw_m, raw_p, float(tol), spec_vals, snapped,
                        [[float(x), int(k)] for x, k in res.essential], res, front, diag)


def fiber_spectral_value(S: Gfqi, q: float, radii, resolution: int = 64, b: Optional[float] = None) -> float:
    """The single spectral value of the fiber function e -> S(q, e)."""
    if S.dim == 0:
        return float(S(np.array([q]), np.zeros((1, 0)))[0])
    axes = [np.linspace(-r, r, resolution + 1) for r in radii]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    V = S(np.full(pts.shape[0], q), pts).reshape((resolution + 1,) * S.dim)
    if b is None:
        b = float(V.min()) - 1.0 if S.index == 0 else plan_box(S).b
    res = reduce(lattice_filtration(V, (False,) * S.dim, b))
    vals = res.essential_in_degree(S.index)
    if vals.size != 1 or res.essential.shape[0] != 1:
        raise EssentialCountError(f"fiber function at q={q} has essential classes {res.essential.tolist()}")
    return float(vals[0])


# --------------------------------------------------------------------------- convergence


@dataclass
class ConvergenceRow:
    n: int
    resolution: int
    ell_minus: float
    ell_plus: float
    raw_minus: float
    raw_plus: float
    seconds: float


def convergence_study(S: Gfqi, resolutions, reference: Optional[tuple] = None, n_per_res=None,
                      margin: float = 1.0) -> dict:
    """Raw spectral pair over a sequence of lattice resolutions.

    `resolutions` holds fiber resolutions; the circle grid uses 4x as many
    points unless `n_per_res` gives them. Errors are measured against
    `reference` when supplied, otherwise against the finest row. Rows whose
    error grows by more than a factor 2 over the previous one are flagged.
    """
    if len(resolutions) < 2:
        raise ValueError("at least two resolutions are needed")
    rows = []
    for i, r in enumerate(resolutions):
        n = n_per_res[i] if n_per_res is not None else max(8, 4 * r)
        t0 = time.perf_counter()
        sp = spectral_pair(S, SpectralConfig(n=n, resolution=r, margin=margin), with_spectrum=False)
        rows.append(ConvergenceRow(n, r, sp.ell_minus, sp.ell_plus, sp.raw_minus, sp.raw_plus,
                                   time.perf_counter() - t0))
    ref = reference if reference is not None else (rows[-1].raw_minus, rows[-1].raw_plus)
    errs = [max(abs(rw.raw_minus - ref[0]), abs(rw.raw_plus - ref[1])) for rw in rows]
    flags = []
    for i in range(1, len(rows)):
        if errs[i] > 2.0 * errs[i - 1] + 1e-12:
            flags.append(i)
    return {"rows": [asdict(r) for r in rows], "errors": errs, "non_monotone": flags, "reference": list(ref)}
