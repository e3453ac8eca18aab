"""Contact Hamiltonian mechanics on J^1 S^1 with contact form dz + p dq.

The contact vector field of H(t, q, p, z) is

    qdot = H_p,   pdot = -H_q + p H_z,   zdot = H - p H_p,

which is the unique field X with sigma(X) = H and
d sigma(X, .) = dH(R) sigma - dH for the Reeb field R = d/dz.
`vector_field_residuals` checks these defining relations directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import sympy as sp

from .genfun import LegendrianFront, legendrian_defect

FD = 1e-6


# --------------------------------------------------------------------------- bump functions


def _bump_derivative(x, c, w, k):
    """k-th derivative of exp(1 - 1/(1 - s^2)), s = (x - c)/w, supported on |s| < 1."""
    x = np.asarray(x, dtype=float)
    s = (x - c) / w
    inside = np.abs(s) < 1.0
    ss = np.where(inside, s, 0.0)
    u = 1.0 - ss * ss
    b = np.where(inside, np.exp(1.0 - 1.0 / u), 0.0)
    if k == 0:
        return b
    f1 = -2.0 * ss / u ** 2
    if k == 1:
        return b * f1 / w
    f2 = -2.0 / u ** 2 - 8.0 * ss ** 2 / u ** 3
    if k == 2:
        return b * (f2 + f1 ** 2) / w ** 2
    f3 = -24.0 * ss / u ** 3 - 48.0 * ss ** 3 / u ** 4
    if k == 3:
        return b * (f3 + 3 * f1 * f2 + f1 ** 3) / w ** 3
    raise ValueError("bump derivatives are available up to order 3")


def bump(x, center=0.0, width=1.0):
    """Smooth bump equal to 1 at `center`, vanishing for |x - center| >= width."""
    return _bump_derivative(x, center, width, 0)


class _SymBump(sp.Function):
    nargs = 3

    def fdiff(self, argindex=1):
        if argindex != 1:
            raise ValueError("bump center and width must be numeric constants")
        x, c, w = self.args
        return _SymBumpD(x, c, w, 1)


class _SymBumpD(sp.Function):
    nargs = 4

    def fdiff(self, argindex=1):
        if argindex != 1:
            raise ValueError("bump center and width must be numeric constants")
        x, c, w, k = self.args
        return _SymBumpD(x, c, w, k + 1)


_NUMERIC = {"_SymBump": lambda x, c, w: _bump_derivative(x, c, w, 0),
            "_SymBumpD": lambda x, c, w, k: _bump_derivative(x, c, w, int(k))}

SYMBOLS = {name: sp.Symbol(name, real=True) for name in ("t", "q", "p", "z")}


# --------------------------------------------------------------------------- Hamiltonians


class UnsupportedHamiltonian(ValueError):
    """Raised when a Hamiltonian falls outside the classes the pipeline can handle exactly."""


@dataclass
class ContactHamiltonian:
    """Evaluable H(t, q, p, z) with structural flags.

    Flags are verified by random sampling on construction: z_independent
    (|H(z) - H(0)| <= 1e-12), z_periodic (period 1 in z). `p_support_radius`
    declares that H vanishes for |p| >= radius (None: unbounded in p).
    """

    func: Callable
    grad: Optional[Callable] = None
    label: str = "H"
    z_independent: bool = False
    z_periodic: bool = False
    p_independent: bool = False
    autonomous: bool = False
    p_support_radius: Optional[float] = None
    expr: Optional[str] = None
    verify: bool = True

    def __post_init__(self):
        if self.z_independent:
            self.z_periodic = True
        if self.verify:
            self._verify_flags()

    # -- evaluation
    def __call__(self, t, q, p, z):
        t, q, p, z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, q, p, z)))
        return np.broadcast_to(np.asarray(self.func(t, q, p, z), dtype=float), q.shape)

    def partials(self, t, q, p, z):
        """(H, H_q, H_p, H_z), analytic when available, otherwise central differences."""
        t, q, p, z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, q, p, z)))
        h = self(t, q, p, z)
        if self.grad is not None:
            hq, hp, hz = (np.broadcast_to(np.asarray(g, dtype=float), q.shape) for g in self.grad(t, q, p, z))
            return h, hq, hp, hz
        hq = (self(t, q + FD, p, z) - self(t, q - FD, p, z)) / (2 * FD)
        hp = (self(t, q, p + FD, z) - self(t, q, p - FD, z)) / (2 * FD)
        hz = (self(t, q, p, z + FD) - self(t, q, p, z - FD)) / (2 * FD)
        return h, hq, hp, hz

    def _verify_flags(self, samples=200, seed=12345):
        rng = np.random.default_rng(seed)
        t = rng.random(samples)
        q = rng.random(samples)
        P = (self.p_support_radius or 2.0) * 1.5
        p = rng.uniform(-P, P, samples)
        z = rng.uniform(-3, 3, samples)
        h = self(t, q, p, z)
        if not np.all(np.isfinite(h)):
            raise ValueError(f"{self.label}: non-finite values")
        if self.z_independent and np.max(np.abs(h - self(t, q, p, 0 * z))) > 1e-12:
            raise ValueError(f"{self.label}: declared z-independent but depends on z")
        if self.z_periodic and np.max(np.abs(h - self(t, q, p, z + 1.0))) > 1e-9:
            raise ValueError(f"{self.label}: declared 1-periodic in z but is not")
        if np.max(np.abs(h - self(t, q + 1.0, p, z))) > 1e-9:
            raise ValueError(f"{self.label}: not 1-periodic in q")
        if self.p_independent and np.max(np.abs(h - self(t, q, 0 * p, z))) > 1e-12:
            raise ValueError(f"{self.label}: declared p-independent but depends on p")
        if self.autonomous and np.max(np.abs(h - self(0 * t, q, p, z))) > 1e-12:
            raise ValueError(f"{self.label}: declared autonomous but depends on t")
        if self.p_support_radius is not None:
            r = self.p_support_radius
            pp = np.sign(p) * (r + np.abs(p))
            if np.max(np.abs(self(t, q, pp, z))) > 1e-12:
                raise ValueError(f"{self.label}: nonzero beyond declared p support {r}")

    # -- structure
    @property
    def kind(self) -> str:
        """Generator class used by the pipeline."""
        if self.p_independent and self.z_independent:
            return "base"
        if self.p_independent and self.z_periodic:
            return "value"
        if self.z_independent:
            return "lifted"
        return "unsupported"

    def scaled(self, s: float) -> "ContactHamiltonian":
        g = self.grad
        return ContactHamiltonian(lambda t, q, p, z: s * self.func(t, q, p, z),
                                  None if g is None else (lambda t, q, p, z: tuple(s * np.asarray(x) for x in g(t, q, p, z))),
                                  label=f"{s}*({self.label})", z_independent=self.z_independent,
                                  z_periodic=self.z_periodic, p_independent=self.p_independent,
                                  autonomous=self.autonomous, p_support_radius=self.p_support_radius,
                                  expr=None if self.expr is None else f"({s})*({self.expr})", verify=False)

    def __add__(self, other: "ContactHamiltonian") -> "ContactHamiltonian":
        a, b = self, other
        g = None
        if a.grad is not None and b.grad is not None:
            g = lambda t, q, p, z: tuple(np.asarray(x) + np.asarray(y) for x, y in zip(a.grad(t, q, p, z), b.grad(t, q, p, z)))
        rad = None if (a.p_support_radius is None or b.p_support_radius is None) else max(a.p_support_radius, b.p_support_radius)
        return ContactHamiltonian(lambda t, q, p, z: a.func(t, q, p, z) + b.func(t, q, p, z), g,
                                  label=f"{a.label}+{b.label}", z_independent=a.z_independent and b.z_independent,
                                  z_periodic=a.z_periodic and b.z_periodic,
                                  p_independent=a.p_independent and b.p_independent,
                                  autonomous=a.autonomous and b.autonomous, p_support_radius=rad,
                                  expr=None if (a.expr is None or b.expr is None) else f"({a.expr})+({b.expr})",
                                  verify=False)

    # -- bounds over T*S^1 x S^1 (or J^1 S^1 for z-independent H)
    def extrema(self, t0: float, t1: float, p_range: float = 4.0, nt: int = 17, nq: int = 129, np_: int = 129,
                nz: int = 17):
        """Sampled (min_x H_t, max_x H_t) at nt Gauss-Legendre times; returns (times, weights, mins, maxs)."""
        x, w = np.polynomial.legendre.leggauss(nt)
        ts = 0.5 * (t1 - t0) * (x + 1) + t0
        ws = 0.5 * (t1 - t0) * w
        P = (self.p_support_radius + 0.5) if self.p_support_radius is not None else p_range
        qg = np.linspace(0, 1, nq, endpoint=False)
        pg = np.linspace(-P, P, np_) if not self.p_independent else np.zeros(1)
        zg = np.linspace(0, 1, nz, endpoint=False) if not self.z_independent else np.zeros(1)
        Q, Pp, Z = np.meshgrid(qg, pg, zg, indexing="ij")
        mins, maxs = [], []
        for tt in ts:
            h = self(tt, Q, Pp, Z)
            lo, hi = float(h.min()), float(h.max())
            if self.p_support_radius is not None:
                lo, hi = min(lo, 0.0), max(hi, 0.0)
            mins.append(lo)
            maxs.append(hi)
        return ts, ws, np.array(mins), np.array(maxs)

    def grad_bound(self, t0, t1, p_range=4.0) -> float:
        ts = np.linspace(t0, t1, 5)
        P = (self.p_support_radius + 0.5) if self.p_support_radius is not None else p_range
        rng = np.random.default_rng(7)
        m = 4000
        q = rng.random(m)
        p = rng.uniform(-P, P, m)
        z = rng.uniform(0, 1, m)
        best = 0.0
        for tt in ts:
            _, hq, hp, hz = self.partials(tt, q, p, z)
            best = max(best, float(np.max(np.sqrt(hq ** 2 + hp ** 2 + hz ** 2))))
        return best


def parse_hamiltonian(expr: str, p_support_radius: Optional[float] = None, label: Optional[str] = None,
                      p_cutoff: Optional[float] = None) -> ContactHamiltonian:
    """Build a ContactHamiltonian from a string over q, p, z, t with sin, cos, exp, pi,
    bump(x, center, width) and plateau(x, r) (1 on |x| <= r - 1, 0 on |x| >= r).

    Structural flags are derived from the expression: symbols that do not
    occur are independent variables; z-periodicity is tested numerically.
    `p_cutoff` multiplies by a plateau in p that vanishes beyond the value,
    for Hamiltonians unbounded in p.
    """
    local = dict(SYMBOLS)
    local.update({"sin": sp.sin, "cos": sp.cos, "exp": sp.exp, "pi": sp.pi, "bump": _SymBump,
                  "plateau": _plateau_expr})
    try:
        e = sp.parse_expr(expr, local_dict=local, evaluate=True)
    except Exception as exc:
        raise ValueError(f"cannot parse Hamiltonian {expr!r}: {exc}") from exc
    allowed = set(SYMBOLS.values())
    extra = e.free_symbols - allowed
    if extra:
        raise ValueError(f"unknown symbols {sorted(map(str, extra))} in {expr!r}")
    t, q, p, z = (SYMBOLS[k] for k in ("t", "q", "p", "z"))
    if p_cutoff is not None:
        e = e * _plateau_expr(p, p_cutoff)
    args = (t, q, p, z)
    mods = [_NUMERIC, "numpy"]
    f = sp.lambdify(args, e, modules=mods)
    grads = [sp.lambdify(args, sp.diff(e, v), modules=mods) for v in (q, p, z)]
    free = e.free_symbols
    # piecewise expressions evaluate every branch; the discarded ones may overflow
    def value(tt, qq, pp, zz):
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            return f(tt, qq, pp, zz)

    def gradient(tt, qq, pp, zz):
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            return tuple(g(tt, qq, pp, zz) for g in grads)

    ham = ContactHamiltonian(
        value,
        gradient,
        label=label or expr,
        z_independent=z not in free,
        z_periodic=z not in free,
        p_independent=p not in free,
        autonomous=t not in free,
        p_support_radius=p_support_radius if p_cutoff is None else float(p_cutoff),
        expr=expr,
        verify=False,
    )
    if z in free:
        rng = np.random.default_rng(99)
        s = rng.random((4, 64))
        s[2] = 4 * s[2] - 2
        s[3] = 6 * s[3] - 3
        ham.z_periodic = bool(np.max(np.abs(ham(*s) - ham(s[0], s[1], s[2], s[3] + 1))) < 1e-9)
    if p in free and ham.p_support_radius is None:
        ham.p_support_radius = infer_p_support(ham)
    ham._verify_flags()
    return ham


def infer_p_support(H: ContactHamiltonian, P: float = 20.0, samples: int = 4001) -> Optional[float]:
    """Smallest radius beyond which H vanishes on a sampled (t, q, p, z) grid, or None if H reaches |p| = P."""
    pg = np.linspace(-P, P, samples)
    rng = np.random.default_rng(3)
    tq = rng.random((3, 48))
    T, Q, PP = np.meshgrid(tq[0], tq[1], pg, indexing="ij")
    Z = np.broadcast_to(tq[2][None, :, None], T.shape)
    h = np.abs(H(T, Q, PP, Z)).max(axis=(0, 1))
    nz = np.flatnonzero(h > 0)
    if nz.size == 0:
        return 0.0
    r = float(np.max(np.abs(pg[nz])))
    if r >= P - 2 * P / (samples - 1):
        return None
    return r + 2 * P / (samples - 1)


def _plateau_expr(p, P):
    """1 on |p| <= P - 1, 0 on |p| >= P, smooth in between (product of two shifted bumps' integrals is avoided)."""
    s = (sp.Abs(p) - (P - 1))
    return sp.Piecewise((1, s <= 0), (0, s >= 1), (sp.exp(1 - 1 / (1 - s ** 2)), True))


def lift_hamiltonian(h: Callable, p_support_radius: float, grad: Optional[Callable] = None, label: str = "h",
                     autonomous: bool = False) -> ContactHamiltonian:
    """H(t, q, p, z) = h(t, q, p) for h compactly supported in |p| < p_support_radius."""
    g = None
    if grad is not None:
        g = lambda t, q, p, z: tuple(grad(t, q, p)) + (np.zeros(np.shape(q)),)
    return ContactHamiltonian(lambda t, q, p, z: h(t, q, p), g, label=label, z_independent=True, z_periodic=True,
                              autonomous=autonomous, p_support_radius=p_support_radius)


def constant_hamiltonian(c: float) -> ContactHamiltonian:
    c = float(c)
    return ContactHamiltonian(lambda t, q, p, z: np.full(np.shape(q), c),
                              lambda t, q, p, z: (np.zeros(np.shape(q)),) * 3, label=f"{c}", z_independent=True,
                              p_independent=True, autonomous=True, expr=repr(c))


# --------------------------------------------------------------------------- vector field


def contact_vector_field(H: ContactHamiltonian, t, q, p, z):
    """(qdot, pdot, zdot) of the contact Hamiltonian H at the given points."""
    h, hq, hp, hz = H.partials(t, q, p, z)
    return hp, -hq + p * hz, h - p * hp


def vector_field_residuals(H: ContactHamiltonian, pts: np.ndarray, t: float = 0.0, fd: float = 1e-5):
    """Residuals of sigma(X) = H and d sigma(X, .) = dH(R) sigma - dH at points (q, p, z).

    The differential of H is taken by central differences on H itself,
    independently of the partials used to assemble X.
    """
    q, p, z = pts[:, 0], pts[:, 1], pts[:, 2]
    X = np.stack(contact_vector_field(H, t, q, p, z), axis=1)
    h = H(t, q, p, z)
    sig = X[:, 2] + p * X[:, 0]
    r1 = np.abs(sig - h)
    dH = np.stack([(H(t, q + fd, p, z) - H(t, q - fd, p, z)) / (2 * fd),
                   (H(t, q, p + fd, z) - H(t, q, p - fd, z)) / (2 * fd),
                   (H(t, q, p, z + fd) - H(t, q, p, z - fd)) / (2 * fd)], axis=1)
    # d sigma = dp ^ dq, so d sigma(X, Y) = X_p Y_q - X_q Y_p; compare on the basis vectors (dq, dp, dz)
    lhs = np.stack([X[:, 1], -X[:, 0], np.zeros_like(q)], axis=1)
    sigma_row = np.stack([p, np.zeros_like(q), np.ones_like(q)], axis=1)
    rhs = dH[:, 2:3] * sigma_row - dH
    r2 = np.max(np.abs(lhs - rhs), axis=1)
    return r1, r2


# --------------------------------------------------------------------------- integration


def required_steps(H: ContactHamiltonian, t0: float, t1: float, p_range: float = 4.0) -> int:
    return max(1, int(math.ceil(40.0 * abs(t1 - t0) * H.grad_bound(min(t0, t1), max(t0, t1), p_range))))


def integrate(H: ContactHamiltonian, pts: np.ndarray, t0: float, t1: float, steps: Optional[int] = None) -> np.ndarray:
    """Classical RK4 transport of points (q, p, z) from time t0 to t1; q stays lifted to R."""
    Y = np.array(pts, dtype=float, copy=True)
    if t1 == t0:
        return Y
    if steps is None:
        pr = max(4.0, float(np.max(np.abs(Y[:, 1]))) + 1.0) if len(Y) else 4.0
        steps = required_steps(H, t0, t1, pr)
    dt = (t1 - t0) / steps

    def F(t, Y):
        return np.stack(contact_vector_field(H, t, Y[:, 0], Y[:, 1], Y[:, 2]), axis=1)

    t = t0
    for _ in range(steps):
        k1 = F(t, Y)
        k2 = F(t + dt / 2, Y + dt / 2 * k1)
        k3 = F(t + dt / 2, Y + dt / 2 * k2)
        k4 = F(t + dt, Y + dt * k3)
        Y = Y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
    return Y


class DefectError(RuntimeError):
    pass


def flow(H: ContactHamiltonian, front: LegendrianFront, t0: float, t1: float, steps: Optional[int] = None,
         tol_leg: Optional[float] = None) -> LegendrianFront:
    """Transport every front point by the contact flow of H from t0 to t1 (RK4)."""
    pr = max(4.0, float(np.max(np.abs(front.p))) + 1.0) if len(front.p) else 4.0
    need = required_steps(H, t0, t1, pr)
    if steps is not None and steps < need:
        raise ValueError(f"steps={steps} below the stability guard {need}")
    steps = steps or need
    Y = integrate(H, front.points, t0, t1, steps)
    order_q = Y[:, 0]
    Y[:, 0] = np.mod(order_q, 1.0)
    out = LegendrianFront(Y, front.branch.copy(), dict(front.closed), tol_leg or front.tol_leg)
    before = legendrian_defect(front)
    d = legendrian_defect(out)
    if d > out.tol_leg and d > 4 * before:
        raise DefectError(f"Legendrian defect {d:.3e} exceeds {out.tol_leg:.1e}; increase steps beyond {steps}")
    return out


def zero_section_front(m: int, tol_leg: float = 1e-2) -> LegendrianFront:
    q = np.arange(m) / m
    pts = np.stack([q, np.zeros(m), np.zeros(m)], axis=1)
    return LegendrianFront(pts, np.zeros(m, dtype=int), {0: True}, tol_leg)


# --------------------------------------------------------------------------- symplectic oracle


def symplectic_flow(h: Callable, dh: Callable, q0, p0, t0: float, t1: float, steps: int = 1000, iters: int = 30):
    """Two-stage Gauss-Legendre (order 4, symplectic) integration of qdot = h_p, pdot = -h_q on T*S^1.

    `dh(t, q, p)` returns (h_q, h_p). The stage equations are solved by fixed-point iteration.
    """
    r3 = math.sqrt(3.0)
    A = np.array([[0.25, 0.25 - r3 / 6], [0.25 + r3 / 6, 0.25]])
    c = np.array([0.5 - r3 / 6, 0.5 + r3 / 6])
    bw = np.array([0.5, 0.5])
    y = np.stack([np.asarray(q0, dtype=float), np.asarray(p0, dtype=float)], axis=0)
    dt = (t1 - t0) / steps

    def f(t, Y):
        hq, hp = dh(t, Y[0], Y[1])
        return np.stack([hp, -hq], axis=0)

    t = t0
    for _ in range(steps):
        K = np.stack([f(t, y), f(t, y)], axis=0)
        for _ in range(iters):
            Y1 = y + dt * (A[0, 0] * K[0] + A[0, 1] * K[1])
            Y2 = y + dt * (A[1, 0] * K[0] + A[1, 1] * K[1])
            Kn = np.stack([f(t + c[0] * dt, Y1), f(t + c[1] * dt, Y2)], axis=0)
            if np.max(np.abs(Kn - K)) < 1e-15:
                K = Kn
                break
            K = Kn
        y = y + dt * (bw[0] * K[0] + bw[1] * K[1])
        t += dt
    return y[0], y[1]
