"""Contactomorphisms as words in generators, and the pipeline to a generating function of phi(O).

Atoms are Hamiltonian flows, translations T_f, and Reeb shifts. A word
[a_1, ..., a_r] denotes the composition a_1 o ... o a_r, so a_r acts first.

The pipeline carries a generating function and, independently, a front
transported pointwise by the same atoms:

* T_f, Reeb shifts and flows of H(t, q) add a function of q to S.
* Flows of H(t, q, z), 1-periodic in z, reparametrize values fiberwise:
  S -> Phi_q(S), with Phi_q the time map of zdot = H(t, q, z).
* Consecutive flows of z-independent Hamiltonians compactly supported in p
  form a run. The run lifts a symplectic map (q, p) -> (X, P) with action A,
  and when q -> X is a diffeomorphism for every fixed p the image is generated by
  S'(X; e, xi, eta) = S(X + xi, e) + eta xi + W(X, eta), with
  W(X, eta) = A - eta (q - X) tabulated from the flow (two extra fiber variables).
  Cutoffs in xi and eta keep S' quadratic at infinity without new critical points.

After a run, a front that is a graph over the circle is replaced by its
function v(q), read off the new generating function itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import sympy as sp
from scipy.interpolate import CubicHermiteSpline, RectBivariateSpline

from .dynamics import (ContactHamiltonian, UnsupportedHamiltonian, integrate,
                       parse_hamiltonian, zero_section_front)
from .genfun import (Gfqi, LegendrianFront, PeriodicFunction, QuadraticForm, _fiber_critical_batch, _newton_fiber,
                     graphical_gfqi, shift_by_function, zero_section)
from .homology import plan_box


# --------------------------------------------------------------------------- cutoffs


def smooth_cut(s, a, b):
    """1 for |s| <= a, 0 for |s| >= b, quintic blend in between; returns (value, derivative)."""
    s = np.asarray(s, dtype=float)
    t = np.clip((np.abs(s) - a) / (b - a), 0.0, 1.0)
    val = 1.0 - t ** 3 * (10 - 15 * t + 6 * t * t)
    der = -(30 * t * t - 60 * t ** 3 + 30 * t ** 4) / (b - a) * np.sign(s)
    return val, der


SMOOTH_CUT_SLOPE = 1.875


# --------------------------------------------------------------------------- tabulated maps


class PeriodicTable2D:
    """Bicubic spline on [0,1) x [y0, y1], periodic in the first variable, zero outside in y when asked."""

    def __init__(self, x, y, values, zero_outside_y: bool = False, periodic_y: bool = False):
        pad = 4
        xs = np.concatenate([x[-pad:] - 1.0, x, x[:pad] + 1.0])
        V = np.concatenate([values[-pad:], values, values[:pad]], axis=0)
        ys, self.periodic_y = y, periodic_y
        if periodic_y:
            ys = np.concatenate([y[-pad:] - 1.0, y, y[:pad] + 1.0])
            V = np.concatenate([V[:, -pad:], V, V[:, :pad]], axis=1)
        self.spl = RectBivariateSpline(xs, ys, V, kx=3, ky=3, s=0)
        self.y0, self.y1 = float(y[0]), float(y[-1])
        self.zero_outside_y = zero_outside_y
        self.vmin, self.vmax = float(values.min()), float(values.max())

    def __call__(self, x, y):
        x = np.mod(np.asarray(x, dtype=float), 1.0)
        y = np.asarray(y, dtype=float)
        yy = np.mod(y, 1.0) if self.periodic_y else np.clip(y, self.y0, self.y1)
        v = self.spl.ev(x, yy)
        vx = self.spl.ev(x, yy, dx=1)
        vy = self.spl.ev(x, yy, dy=1)
        if self.zero_outside_y:
            out = (y <= self.y0) | (y >= self.y1)
            v, vx, vy = (np.where(out, 0.0, a) for a in (v, vx, vy))
        return v, vx, vy


class TwistError(RuntimeError):
    """The run map violates the twist condition (q -> X not monotone at fixed momentum)."""


@dataclass
class RunMap:
    """Tabulated run: W = F(X) + Wc(X, eta) with Wc supported in |eta| < p_support."""

    W: PeriodicTable2D
    far: PeriodicFunction
    max_shift: float
    p_support: float
    grid_q: np.ndarray
    grid_eta: np.ndarray
    X: np.ndarray
    P: np.ndarray
    A: np.ndarray


def flow_points(atoms, pts: np.ndarray) -> np.ndarray:
    """Apply atoms (rightmost first) to points (q, p, z); q stays lifted."""
    Y = np.array(pts, dtype=float, copy=True)
    for atom in reversed(atoms):
        Y = atom.apply(Y)
    return Y


def far_field(atoms):
    """(F, reach): far from the p-supports the run is T_F; reach bounds |p| where it is not."""
    parts = [a.shift_function() for a in atoms if a.kind == "base"]
    r = max([a.H.p_support_radius for a in atoms if a.kind == "lifted"], default=0.0)
    slope = sum(float(np.max(np.abs(f.derivative(np.arange(2048) / 2048)))) for f in parts)

    def F(q):
        return sum((f(q) for f in parts), np.zeros(np.shape(q)))

    def dF(q):
        return sum((f.derivative(q) for f in parts), np.zeros(np.shape(q)))

    return PeriodicFunction(F, dF, label="far"), r + slope


def tabulate_run(atoms, nq: int = 256, neta: int = 161) -> RunMap:
    """Flow a (q, eta) grid through the run and tabulate W(X, eta) = A - eta (q - X) minus its far field."""
    far, reach = far_field(atoms)
    E = reach + 0.5
    qg = np.arange(nq) / nq
    eg = np.linspace(-E, E, neta)
    Qm, Em = np.meshgrid(qg, eg, indexing="ij")
    pts = np.stack([Qm.ravel(), Em.ravel(), np.zeros(Qm.size)], axis=1)
    Y = flow_points(atoms, pts)
    X = Y[:, 0].reshape(nq, neta)
    P = Y[:, 1].reshape(nq, neta)
    A = Y[:, 2].reshape(nq, neta)
    dX = np.diff(np.concatenate([X, X[:1] + 1.0], axis=0), axis=0)
    if np.any(dX <= 0):
        j = int(np.argmin(dX.min(axis=0)))
        raise TwistError(f"run map folds at eta={eg[j]:.4f}: q -> X is not increasing")
    Wn = A - Em * (Qm - X) - far(X)
    Wx = Em - P - far.derivative(X)
    edge = max(np.max(np.abs(Wn[:, [0, -1]])), np.max(np.abs(Wx[:, [0, -1]])))
    if edge > 1e-8:
        raise RuntimeError(f"run is not a translation at |eta|={E:.3f} (residual {edge:.2e})")
    Wtab = np.empty((nq, neta))
    for j in range(neta):
        x = X[:, j]
        x = x - np.floor(x[0])
        xx = np.concatenate([x - 1.0, x, x + 1.0])
        Wtab[:, j] = CubicHermiteSpline(xx, np.tile(Wn[:, j], 3), np.tile(Wx[:, j], 3))(qg)
    return RunMap(PeriodicTable2D(qg, eg, Wtab, zero_outside_y=True), far, float(np.max(np.abs(X - Qm))), float(reach),
                  qg, eg, X, P, A)


# --------------------------------------------------------------------------- composed nodes


class TwistComposedGfqi(Gfqi):
    """Image of the Legendrian of `old` under a lifted run, via the run's mixed generating function.

    Fiber variables are (e_old, u, v) with xi = lam (u - v), eta = (u + v)/lam,
    so the new quadratic part eta xi = u^2 - v^2 is diagonal.
    """

    kind = "twist"

    def __init__(self, old: Gfqi, run: RunMap, grad_q_bound: float):
        self.old, self.run = old, run
        Gq = float(grad_q_bound)
        osc = old.dev[1] - old.dev[0]
        # slack between the largest shift and the xi-plateau buys a narrower eta transition
        self.Xi = 2.0 * run.max_shift + 0.5
        self.Xi2 = self.Xi + 0.25
        self.Eta = Gq + 0.5
        dmax = min(self.Xi2 * Gq, osc)
        span = SMOOTH_CUT_SLOPE * dmax / (self.Xi - run.max_shift) + 0.25
        self.Eta2 = max(self.Eta + span, run.p_support + 0.5)
        self.lam = math.sqrt(self.Xi2 / self.Eta2)
        cu = 0.5 * (self.Xi / self.lam + self.lam * self.Eta)
        su = 0.5 * (self.Xi2 / self.lam + self.lam * self.Eta2)
        wlo, whi = min(0.0, run.W.vmin), max(0.0, run.W.vmax)
        flo, fhi = run.far.bounds()
        super().__init__(old.Q.direct_sum(QuadraticForm((1.0, -1.0))), core=old.core + (cu, cu),
                         support=old.support + (su, su),
                         dev=(old.dev[0] - dmax + wlo + flo, old.dev[1] + dmax + whi + fhi), parents=(old,),
                         label="run")

    def _eval(self, X, e):
        d0 = self.old.dim
        eo, u, v = e[:, :d0], e[:, d0], e[:, d0 + 1]
        lam = self.lam
        xi = lam * (u - v)
        eta = (u + v) / lam
        s0, s0q, s0e = self.old._eval(X, eo)
        s1, s1q, s1e = self.old._eval(X + xi, eo)
        c1, dc1 = smooth_cut(xi, self.Xi, self.Xi2)
        c2, dc2 = smooth_cut(eta, self.Eta, self.Eta2)
        C = c1 * c2
        D = s1 - s0
        W, WX, We = self.run.W(X, eta)
        S = s0 + eta * xi + C * D + c1 * W + self.run.far(X)
        dX = s0q * (1 - C) + C * s1q + c1 * WX + self.run.far.derivative(X)
        de = s0e * (1 - C)[:, None] + C[:, None] * s1e
        dxi = eta + dc1 * c2 * D + C * s1q + dc1 * W
        deta = xi + c1 * dc2 * D + c1 * We
        du = lam * dxi + deta / lam
        dv = -lam * dxi + deta / lam
        return S, dX, np.concatenate([de, du[:, None], dv[:, None]], axis=1)


class ValueFlowGfqi(Gfqi):
    """S' = S + chi(|e|) D(q, S) with Phi(q, z) = z + D(q, z) the per-q time map of zdot = H(t, q, z)."""

    kind = "value-flow"

    def __init__(self, old: Gfqi, D: PeriodicTable2D, dz_min: float):
        self.old, self.D = old, D
        dabs = max(abs(D.vmin), abs(D.vmax))
        if old.dim:
            reach = np.maximum(np.array(old.core), np.array(old.support))
            self.rho1 = float(np.sqrt(np.sum(reach ** 2))) + 0.5
            cmin = float(np.min(np.abs(old.Q.array)))
            m = 1.0 + min(0.0, dz_min)
            width = max(1.0, 2.0 * SMOOTH_CUT_SLOPE * dabs / (2.0 * cmin * self.rho1 * m))
            self.rho2 = self.rho1 + width
        else:
            self.rho1 = self.rho2 = 0.0
        sup = tuple(max(s, self.rho2) for s in old.support)
        super().__init__(old.Q, core=old.core, support=sup,
                         dev=(old.dev[0] + min(0.0, D.vmin), old.dev[1] + max(0.0, D.vmax)), parents=(old,),
                         label="value-flow")

    def _eval(self, q, e):
        s, sq, se = self.old._eval(q, e)
        D, Dq, Dz = self.D(q, s)
        if self.dim == 0:
            return s + D, sq * (1 + Dz) + Dq, se
        r = np.sqrt(np.sum(e * e, axis=1))
        chi, dchi = smooth_cut(r, self.rho1, self.rho2)
        rs = np.where(r > 0, r, 1.0)
        S = s + chi * D
        dq = sq + chi * (Dq + Dz * sq)
        de = se * (1 + chi * Dz)[:, None] + (dchi * D / rs)[:, None] * e
        return S, dq, de


def tabulate_value_flow(H: ContactHamiltonian, t0: float, t1: float, nq: int = 256, nz: int = 128):
    """Per-q time map of zdot = H(t, q, z): returns the doubly periodic table of Phi - z and min d(Phi - z)/dz."""
    qg = np.arange(nq) / nq
    zg = np.arange(nz) / nz
    Qm, Zm = np.meshgrid(qg, zg, indexing="ij")
    pts = np.stack([Qm.ravel(), np.zeros(Qm.size), Zm.ravel()], axis=1)
    Y = integrate(H, pts, t0, t1)
    D = (Y[:, 2] - pts[:, 2]).reshape(nq, nz)
    tab = PeriodicTable2D(qg, zg, D, periodic_y=True)
    dz = tab.spl.ev(Qm.ravel(), Zm.ravel(), dy=1)
    return tab, float(dz.min())


# --------------------------------------------------------------------------- atoms


def parse_base_function(expr: str) -> PeriodicFunction:
    """1-periodic function of q from a string over q with sin, cos, exp, pi."""
    q = sp.Symbol("q", real=True)
    e = sp.parse_expr(expr, local_dict={"q": q, "sin": sp.sin, "cos": sp.cos, "exp": sp.exp, "pi": sp.pi})
    if e.free_symbols - {q}:
        raise ValueError(f"function of q expected, got {expr!r}")
    f = sp.lambdify(q, e, "numpy")
    df = sp.lambdify(q, sp.diff(e, q), "numpy")
    pf = PeriodicFunction(f, df, label=expr)
    x = np.random.default_rng(5).random(32)
    if np.max(np.abs(pf(x + 1.0) - pf(x))) > 1e-9:
        raise ValueError(f"{expr!r} is not 1-periodic")
    return pf


@dataclass(frozen=True)
class Flow:
    """Time-(t0 -> t1) map of the contact flow of H."""

    H: ContactHamiltonian
    t0: float = 0.0
    t1: float = 1.0
    key: str = ""

    @property
    def kind(self):
        return self.H.kind

    @property
    def z_independent(self):
        return self.H.z_independent

    @property
    def z_periodic(self):
        return self.H.z_periodic

    def inverse(self):
        return Flow(self.H, self.t1, self.t0, self.key)

    def shift_function(self) -> PeriodicFunction:
        """For H = H(t, q): the time map is T_F with F(q) the time integral of H."""
        if self.kind != "base":
            raise TypeError("only Hamiltonians of q and t alone act as translations")
        x, w = np.polynomial.legendre.leggauss(16)
        ts = 0.5 * (self.t1 - self.t0) * (x + 1) + self.t0
        ws = 0.5 * (self.t1 - self.t0) * w
        H = self.H

        def F(q):
            q = np.asarray(q, dtype=float)
            return sum(wk * H(tk, q, 0.0 * q, 0.0 * q) for tk, wk in zip(ts, ws))

        def dF(q):
            q = np.asarray(q, dtype=float)
            return sum(wk * H.partials(tk, q, 0.0 * q, 0.0 * q)[1] for tk, wk in zip(ts, ws))

        return PeriodicFunction(F, dF, label=f"int[{self.key or H.label}]")

    def apply(self, Y):
        return integrate(self.H, Y, self.t0, self.t1)

    def action_bounds(self):
        """(integral of min H, integral of max H) along the path this atom traverses."""
        a, b = sorted((self.t0, self.t1))
        ts, ws, mins, maxs = self.H.extrema(a, b)
        lo, hi = float(np.dot(ws, mins)), float(np.dot(ws, maxs))
        return (lo, hi) if self.t1 >= self.t0 else (-hi, -lo)

    def describe(self):
        return {"atom": "flow", "H": self.key or self.H.label, "t0": self.t0, "t1": self.t1}


@dataclass(frozen=True)
class Translation:
    """T_f(q, p, z) = (q, p - f'(q), z + f(q)), the time-1 map of H = f(q)."""

    f: PeriodicFunction
    sign: float = 1.0
    key: str = ""

    kind = "base"
    z_independent = True
    z_periodic = True

    def inverse(self):
        return Translation(self.f, -self.sign, self.key)

    def shift_function(self):
        return self.f.scaled(self.sign) if self.sign != 1.0 else self.f

    def apply(self, Y):
        Y = np.array(Y, copy=True)
        Y[:, 1] -= self.sign * self.f.derivative(Y[:, 0])
        Y[:, 2] += self.sign * self.f(Y[:, 0])
        return Y

    def action_bounds(self):
        lo, hi = self.f.bounds()
        return (self.sign * lo, self.sign * hi) if self.sign > 0 else (self.sign * hi, self.sign * lo)

    def describe(self):
        return {"atom": "translation", "f": self.key or self.f.label, "sign": self.sign}


@dataclass(frozen=True)
class Reeb:
    """z -> z + c."""

    c: float

    kind = "base"
    z_independent = True
    z_periodic = True

    def inverse(self):
        return Reeb(-self.c)

    def shift_function(self):
        return PeriodicFunction.constant(self.c)

    def apply(self, Y):
        Y = np.array(Y, copy=True)
        Y[:, 2] += self.c
        return Y

    def action_bounds(self):
        return (self.c, self.c)

    def describe(self):
        return {"atom": "reeb", "c": self.c}


def flow_atom(expr: str, duration: float = 1.0, p_support_radius: Optional[float] = None) -> Flow:
    H = parse_hamiltonian(expr, p_support_radius=p_support_radius)
    return Flow(H, 0.0, float(duration), key=expr)


def translation_atom(expr: str) -> Translation:
    return Translation(parse_base_function(expr), 1.0, key=expr)


# --------------------------------------------------------------------------- handles


@dataclass(frozen=True)
class Handle:
    """Word in generator contactomorphisms; atoms[-1] acts first."""

    atoms: tuple = ()
    name: str = ""

    @property
    def equivariant(self) -> bool:
        return all(a.z_independent for a in self.atoms)

    @property
    def periodic(self) -> bool:
        return all(a.z_periodic for a in self.atoms)

    def __matmul__(self, other: "Handle") -> "Handle":
        return Handle(self.atoms + other.atoms, f"{self.name}*{other.name}").simplified()

    compose = __matmul__

    def inverse(self) -> "Handle":
        return Handle(tuple(a.inverse() for a in reversed(self.atoms)), f"({self.name})^-1").simplified()

    def conjugate(self, alpha: "Handle") -> "Handle":
        """alpha o self o alpha^-1."""
        return Handle(alpha.atoms + self.atoms + alpha.inverse().atoms,
                      f"{alpha.name}.{self.name}.{alpha.name}^-1").simplified()

    def power(self, k: int) -> "Handle":
        if k < 0:
            return self.inverse().power(-k)
        return Handle(self.atoms * k, f"({self.name})^{k}").simplified()

    @staticmethod
    def _same_generator(a, b) -> bool:
        """Atoms built from one generator, by identity or by equal source expression."""
        if isinstance(a, Flow) and isinstance(b, Flow):
            return a.H is b.H or (bool(a.key) and a.key == b.key
                                  and a.H.p_support_radius == b.H.p_support_radius)
        if isinstance(a, Translation) and isinstance(b, Translation):
            return a.f is b.f or (bool(a.key) and a.key == b.key)
        return False

    def simplified(self) -> "Handle":
        """Merge adjacent flows of one autonomous Hamiltonian, adjacent Reeb shifts and translations; cancel inverse pairs."""
        out = []
        for a in self.atoms:
            if out:
                b = out[-1]
                if self._same_generator(a, b) and isinstance(a, Flow) and not a.H.autonomous \
                        and a.t0 == b.t1 and a.t1 == b.t0:
                    out.pop()
                    continue
                if self._same_generator(a, b) and isinstance(a, Flow) and a.H.autonomous:
                    dur = (b.t1 - b.t0) + (a.t1 - a.t0)
                    out.pop()
                    if abs(dur) > 1e-15:
                        out.append(Flow(a.H, 0.0, dur, a.key))
                    continue
                if isinstance(a, Reeb) and isinstance(b, Reeb):
                    out.pop()
                    if abs(a.c + b.c) > 1e-15:
                        out.append(Reeb(a.c + b.c))
                    continue
                if self._same_generator(a, b) and isinstance(a, Translation):
                    out.pop()
                    s = a.sign + b.sign
                    if abs(s) > 1e-15:
                        out.append(Translation(a.f, s, a.key))
                    continue
            out.append(a)
        return Handle(tuple(out), self.name)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return flow_points(self.atoms, pts)

    def action_bounds(self):
        """(integral of min, integral of max) of a Hamiltonian generating the concatenated path."""
        lo = hi = 0.0
        for a in self.atoms:
            l, h = a.action_bounds()
            lo += l
            hi += h
        return lo, hi

    def describe(self):
        return {"name": self.name, "atoms": [a.describe() for a in self.atoms]}


def identity() -> Handle:
    return Handle((), "id")


def reeb_handle(c: float) -> Handle:
    return Handle((Reeb(float(c)),), f"R({c})")


def flow_handle(expr: str, duration: float = 1.0, p_support_radius: Optional[float] = None, name: str = "") -> Handle:
    return Handle((flow_atom(expr, duration, p_support_radius),), name or f"flow[{expr}]")


def translation_handle(expr: str, name: str = "") -> Handle:
    return Handle((translation_atom(expr),), name or f"T[{expr}]")


# --------------------------------------------------------------------------- pipeline


@dataclass(frozen=True)
class PipelineConfig:
    front_points: int = 1024
    twist_nq: int = 256
    twist_neta: int = 161
    value_nq: int = 256
    value_nz: int = 128
    graph_n: int = 512
    graph_seed_res: int = 40
    d_max: int = 3
    identity_tol: float = 1e-12
    split_depth: int = 3


@dataclass
class PipelineResult:
    gfqi: Gfqi
    front: LegendrianFront
    log: list = field(default_factory=list)


class PipelineError(RuntimeError):
    pass


def _grad_q_bound(S: Gfqi, samples: int = 40000, seed: int = 1) -> float:
    rng = np.random.default_rng(seed)
    q = rng.random(samples)
    if S.dim == 0:
        qq = np.arange(4096) / 4096
        g = S.value_and_grad(qq, np.zeros((4096, 0)))[1]
        return float(np.max(np.abs(g))) * 1.02 + 0.05
    R = np.array(plan_box(S, 1.0).radii)
    e = rng.uniform(-R, R, size=(samples, S.dim))
    g = S.value_and_grad(q, e)[1]
    return float(np.max(np.abs(g))) * 1.1 + 0.1


def _front_is_graph(front: LegendrianFront) -> bool:
    q = np.unwrap(front.points[:, 0], period=1.0)
    dq = np.diff(np.append(q, q[0] + 1.0))
    return bool(np.all(dq > 0))


def graphical_reduction(S: Gfqi, n: int, seed_res: int):
    """If S has exactly one fiber-critical point over every grid point, return its function v(q) as samples."""
    if S.dim == 0:
        return None
    qs = np.arange(n) / n
    crit = _fiber_critical_batch(S, qs, plan_box(S, 1.0).radii, seed_res, 1e-8)
    if any(E.shape[0] != 1 for E in crit):
        return None
    E = np.vstack(crit)
    return S.value_and_grad(qs, E)[0]


def _graph_from_seeds(S2: "TwistComposedGfqi", before: np.ndarray, after: np.ndarray, n: int, seed_res: int,
                      checks: int = 8):
    """Values of a graphical twist generating function on n grid points, Newton-seeded from transported points.

    Seeds only start the search: every returned point solves dS/de = 0 for S2 itself, and
    uniqueness is confirmed by a lattice search on a few grid points.
    """
    lam = S2.lam
    xi = before[:, 0] - after[:, 0]
    eta = before[:, 1]
    order = np.argsort(np.mod(after[:, 0], 1.0))
    X = np.mod(after[:, 0], 1.0)[order]
    U = 0.5 * (lam * eta + xi / lam)[order]
    V = 0.5 * (lam * eta - xi / lam)[order]
    qs = np.arange(n) / n
    Xp = np.concatenate([X - 1.0, X, X + 1.0])
    E = np.stack([np.interp(qs, Xp, np.tile(U, 3)), np.interp(qs, Xp, np.tile(V, 3))], axis=1)
    E = _newton_fiber(S2, qs, E)
    vals, _, ge = S2.value_and_grad(qs, E)
    if np.max(np.linalg.norm(ge, axis=1)) > 1e-8:
        return None
    probe = qs[:: max(1, n // checks)]
    crit = _fiber_critical_batch(S2, probe, plan_box(S2, 1.0).radii, seed_res, 1e-8)
    if any(c.shape[0] != 1 for c in crit):
        return None
    return vals


class Pipeline:
    """Builds a generating function of phi(O) for a handle, with an independently transported front."""

    def __init__(self, config: PipelineConfig = PipelineConfig()):
        self.config = config

    def run(self, handle: Handle) -> PipelineResult:
        cfg = self.config
        S = zero_section()
        front = zero_section_front(cfg.front_points)
        log = []
        atoms = list(handle.atoms)
        for a in atoms:
            if a.kind == "unsupported":
                raise UnsupportedHamiltonian(f"unsupported generator class for {a.describe()}: "
                                             "needs z-independent H, or p-independent H periodic in z")
        atoms = self._prune(atoms, front, log)
        i = len(atoms) - 1
        while i >= 0:
            a = atoms[i]
            if a.z_independent:
                # maximal block of z-independent atoms acting consecutively
                j = i
                while j - 1 >= 0 and atoms[j - 1].z_independent:
                    j -= 1
                block = atoms[j:i + 1]
                if any(b.kind == "lifted" for b in block):
                    S, front = self._apply_run(S, front, block, log, cfg.split_depth)
                else:
                    for b in reversed(block):
                        S = shift_by_function(S, b.shift_function())
                        log.append({"atom": b.describe(), "dim": S.dim})
                    front = self._transport(front, block)
                i = j - 1
                continue
            tab, dzmin = tabulate_value_flow(a.H, a.t0, a.t1, cfg.value_nq, cfg.value_nz)
            S = ValueFlowGfqi(S, tab, dzmin)
            front = self._transport(front, [a])
            log.append({"atom": a.describe(), "dim": S.dim})
            i -= 1
        return PipelineResult(S, front, log)

    def _prune(self, atoms, front: LegendrianFront, log):
        """Reduce the word to what matters on the front it acts on.

        Atoms fixing the current front are dropped; atoms acting on it as a
        constant z-shift become Reeb atoms. Reeb atoms commute with every
        z-independent atom, so they are moved to the left end of each
        z-independent stretch, which lets conjugating pairs cancel.
        """
        tol = self.config.identity_tol
        kept = []
        pts = front.points
        for a in reversed(atoms):
            new = flow_points([a], pts)
            d = new - pts
            if np.max(np.abs(d)) < tol:
                log.append({"atom": a.describe(), "skipped": "fixes the front it acts on"})
                continue
            dz = d[:, 2]
            if not isinstance(a, Reeb) and np.max(np.abs(d[:, :2])) < tol and np.ptp(dz) < tol:
                c = float(np.mean(dz))
                log.append({"atom": a.describe(), "replaced": {"reeb": c}})
                a = Reeb(c)
            kept.append(a)
            pts = new
        word = kept[::-1]
        out = []
        for a in word:
            if isinstance(a, Reeb):
                k = len(out)
                while k > 0 and out[k - 1].z_independent and not isinstance(out[k - 1], Reeb):
                    k -= 1
                out.insert(k, a)
            else:
                out.append(a)
        reduced = Handle(tuple(out)).simplified().atoms
        if len(reduced) < len(word):
            log.append({"cancelled": len(word) - len(reduced)})
        return list(reduced)

    def _transport(self, front: LegendrianFront, atoms) -> LegendrianFront:
        Y = flow_points(atoms, front.points)
        Y[:, 0] = np.mod(Y[:, 0], 1.0)
        return LegendrianFront(Y, front.branch.copy(), dict(front.closed), front.tol_leg)

    def _apply_run(self, S, front, run_atoms, log, depth):
        cfg = self.config
        new_front = self._transport(front, run_atoms)
        if not any(a.kind == "lifted" for a in run_atoms):
            for b in reversed(run_atoms):
                S = shift_by_function(S, b.shift_function())
            log.append({"run": [a.describe() for a in run_atoms], "dim": S.dim})
            return S, new_front
        moved = np.max(np.abs(new_front.points - front.points)) if len(front.points) else 0.0
        if moved < cfg.identity_tol:
            log.append({"run": [a.describe() for a in run_atoms], "skipped": "acts trivially on the front"})
            return S, new_front
        try:
            run = tabulate_run(run_atoms, cfg.twist_nq, cfg.twist_neta)
        except TwistError:
            halves = self._split(run_atoms) if depth > 0 else None
            if halves is None:
                raise
            for part in reversed(halves):
                S, front = self._apply_run(S, front, part, log, depth - 1)
            return S, front
        if S.dim + 2 > cfg.d_max:
            raise PipelineError(f"fiber dimension {S.dim + 2} would exceed d_max={cfg.d_max}")
        S2 = TwistComposedGfqi(S, run, _grad_q_bound(S))
        entry = {"run": [a.describe() for a in run_atoms], "dim": S2.dim, "max_shift": run.max_shift}
        if _front_is_graph(new_front):
            v = None
            if S.dim == 0:
                lifted = flow_points(run_atoms, front.points)
                v = _graph_from_seeds(S2, front.points, lifted, cfg.graph_n, cfg.graph_seed_res)
            if v is None:
                v = graphical_reduction(S2, cfg.graph_n, cfg.graph_seed_res)
            if v is None:
                raise PipelineError("transported front is a graph but the generating function has folds")
            S2 = graphical_gfqi(PeriodicFunction.from_samples(v, label="graph"))
            entry["graphical"] = True
            entry["dim"] = 0
        log.append(entry)
        return S2, new_front

    @staticmethod
    def _split(run_atoms):
        """Split the run into two halves in time (the longest flow is cut at its midpoint)."""
        if len(run_atoms) > 1:
            k = len(run_atoms) // 2
            return [run_atoms[:k], run_atoms[k:]]
        a = run_atoms[0]
        if not isinstance(a, Flow):
            return None
        mid = 0.5 * (a.t0 + a.t1)
        # word order: the later half acts last, so it sits on the left
        return [[Flow(a.H, mid, a.t1, a.key)], [Flow(a.H, a.t0, mid, a.key)]]
