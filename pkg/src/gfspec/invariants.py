"""Spectral numbers of contactomorphisms and the structures built from them.

ell_pm evaluates (l_-, l_+) of a handle through the generating-function
pipeline. On top of it sit integer parts that never hide borderline cases,
a tri-state order oracle, interval estimates of the two conjugation-invariant
metrics, the homogenized invariant nu, and scenario drivers for the rigidity
statements. Universal quantifiers over conjugators are replaced by seeded
finite samples, so every verdict is either a certificate (a violation found)
or explicitly sample-bound.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .dynamics import symplectic_flow
from .handles import Flow, Handle, Pipeline, PipelineConfig, Reeb, Translation, flow_handle, identity, reeb_handle, \
    translation_handle
from .genfun import ominus
from .homology import SpectralConfig, spectral_pair


class ConsistencyError(RuntimeError):
    """A computed quantity contradicts an exact identity: a pipeline inconsistency, not a mathematical finding."""


# --------------------------------------------------------------------------- robust integer parts


@dataclass(frozen=True)
class SnapEvent:
    value: float
    integer: int
    distance: float
    eps: float
    op: str
    kind: str  # "roundoff" (floating-point noise) or "snap" (a genuinely borderline value)
    context: str = ""


class SnapLog:
    """Collects every snap so integer-part statements are never silently rescued."""

    def __init__(self):
        self.events: list = []

    def record(self, event: SnapEvent):
        self.events.append(event)

    def count(self, kind: Optional[str] = None) -> int:
        return sum(1 for e in self.events if kind is None or e.kind == kind)

    def to_list(self):
        return [asdict(e) for e in self.events]


ROUNDOFF = 1e-9


def _robust(x: float, eps_int: float, op: str, log: Optional[SnapLog], context: str, roundoff: float) -> int:
    if not 0.0 <= eps_int < 0.5:
        raise ValueError(f"eps_int must lie in [0, 0.5), got {eps_int}")
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot take the integer part of {x}")
    n = round(x)
    dist = abs(x - n)
    if dist <= eps_int:
        if dist > 0.0 and log is not None:
            log.record(SnapEvent(x, int(n), dist, eps_int, op, "roundoff" if dist <= roundoff else "snap", context))
        return int(n)
    return int(math.ceil(x)) if op == "ceil" else int(math.floor(x))


def robust_ceil(x: float, eps_int: float = 1e-3, log: Optional[SnapLog] = None, context: str = "",
                roundoff: float = ROUNDOFF) -> int:
    """Ceiling of x after snapping values within eps_int of an integer onto it."""
    return _robust(x, eps_int, "ceil", log, context, roundoff)


def robust_floor(x: float, eps_int: float = 1e-3, log: Optional[SnapLog] = None, context: str = "",
                 roundoff: float = ROUNDOFF) -> int:
    """Floor of x after snapping values within eps_int of an integer onto it."""
    return _robust(x, eps_int, "floor", log, context, roundoff)


# --------------------------------------------------------------------------- spectral reports


@dataclass(frozen=True)
class InvariantConfig:
    spectral: SpectralConfig = SpectralConfig(n=128, resolution=64)
    pipeline: PipelineConfig = PipelineConfig()
    eps_int: float = 1e-3
    # window for Newton-refined critical values, whose error is far below eps_int
    eps_snapped: float = 1e-6
    roundoff: float = ROUNDOFF
    order_tol: float = 1e-6
    threads: int = 1


@dataclass
class SpectralReport:
    handle: dict
    ell_minus: float
    ell_plus: float
    raw_minus: float
    raw_plus: float
    ceil_plus: Optional[int]
    floor_minus: Optional[int]
    snapped: tuple
    eps_int: tuple
    tol_spec: float
    snaps: list
    provenance: dict
    periodic: bool
    equivariant: bool

    @property
    def uncertainty_plus(self) -> float:
        return 0.0 if self.snapped[1] else self.tol_spec

    @property
    def uncertainty_minus(self) -> float:
        return 0.0 if self.snapped[0] else self.tol_spec

    def to_dict(self) -> dict:
        d = asdict(self)
        d["snapped"] = list(self.snapped)
        d["eps_int"] = list(self.eps_int)
        return d


def _atom_key(a):
    if isinstance(a, Flow):
        return ("flow", id(a.H), a.t0, a.t1)
    if isinstance(a, Translation):
        return ("translation", id(a.f), a.sign)
    if isinstance(a, Reeb):
        return ("reeb", a.c)
    raise TypeError(f"unknown atom {a!r}")


class SpectralEngine:
    """Evaluates and memoizes spectral reports; handles are immutable, so words are cached by atom identity."""

    def __init__(self, config: InvariantConfig = InvariantConfig()):
        self.config = config
        self._cache: dict = {}
        self.snap_log = SnapLog()
        self.evaluations = 0

    def _eps(self, snapped: bool, tol_spec: float) -> float:
        eps = self.config.eps_snapped if snapped else max(self.config.eps_int, tol_spec)
        return min(eps, 0.49)

    def report(self, phi: Handle) -> SpectralReport:
        phi = phi.simplified()
        key = tuple(_atom_key(a) for a in phi.atoms)
        hit = self._cache.get(key)
        if hit is not None:
            return hit[1]
        cfg = self.config
        res = Pipeline(cfg.pipeline).run(phi)
        sp = spectral_pair(res.gfqi, cfg.spectral)
        self.evaluations += 1
        snaps = SnapLog()
        ceil_p = floor_m = None
        eps = (self._eps(sp.snapped[0], sp.tol_spec), self._eps(sp.snapped[1], sp.tol_spec))
        if phi.periodic:
            ceil_p = robust_ceil(sp.ell_plus, eps[1], snaps, phi.name, cfg.roundoff)
            floor_m = robust_floor(sp.ell_minus, eps[0], snaps, phi.name, cfg.roundoff)
        for e in snaps.events:
            self.snap_log.record(e)
        diag = {k: v for k, v in sp.diagnostics.items() if k != "reduction_seconds"}
        prov = {"log": res.log, "fiber_dim": res.gfqi.dim, "spectral": diag,
                "n": cfg.spectral.n, "resolution": cfg.spectral.resolution}
        rep = SpectralReport(phi.describe(), float(sp.ell_minus), float(sp.ell_plus), float(sp.raw_minus),
                             float(sp.raw_plus), ceil_p, floor_m, tuple(bool(s) for s in sp.snapped), eps,
                             float(sp.tol_spec), snaps.to_list(), prov, phi.periodic, phi.equivariant)
        if rep.ell_minus > rep.ell_plus:
            raise ConsistencyError(f"l_- > l_+ for {phi.name}")
        self._cache[key] = (phi, rep)
        return rep

    def reports(self, handles: Sequence[Handle]) -> list:
        """Reports in input order; evaluated concurrently when config.threads > 1."""
        if self.config.threads <= 1 or len(handles) <= 1:
            return [self.report(h) for h in handles]
        with ThreadPoolExecutor(max_workers=self.config.threads) as ex:
            return list(ex.map(self.report, handles))


def ell_pm(phi: Handle, config: InvariantConfig = InvariantConfig(), engine: Optional[SpectralEngine] = None):
    """Spectral report of phi: (l_-, l_+) of phi(O), with robust integer parts for periodic handles."""
    return (engine or SpectralEngine(config)).report(phi)


# --------------------------------------------------------------------------- conjugator samples


@dataclass(frozen=True)
class ConjugatorSample:
    """Seeded finite stand-in for "all conjugators": short words in translations, weak lifted flows and Reeb shifts."""

    seed: int
    members: tuple
    size: int
    max_length: int

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def describe(self):
        return {"seed": self.seed, "size": self.size, "max_length": self.max_length,
                "members": [m.describe() for m in self.members]}


def _random_atom_handle(rng: np.random.Generator, amplitude: float, flow_amplitude: float) -> Handle:
    kind = rng.choice(["translation", "flow", "reeb"], p=[0.45, 0.35, 0.2])
    if kind == "translation":
        k = int(rng.integers(1, 3))
        a = round(float(rng.uniform(-amplitude, amplitude)) / k, 4)
        s = round(float(rng.uniform(0, 1)), 4)
        arg = "q" if k == 1 else f"{k}*q"
        return translation_handle(f"{a}*cos(2*pi*({arg} - {s}))")
    if kind == "flow":
        a = round(float(rng.uniform(-flow_amplitude, flow_amplitude)), 4)
        s = round(float(rng.uniform(0, 1)), 4)
        w = round(float(rng.uniform(1.0, 2.0)), 3)
        return flow_handle(f"{a}*cos(2*pi*(q - {s}))*bump(p, 0, {w})")
    return reeb_handle(round(float(rng.uniform(-0.5, 0.5)), 4))


def conjugator_sample(seed: int, size: int = 24, max_length: int = 3, amplitude: float = 0.05,
                      flow_amplitude: float = 0.03, include_identity: bool = True) -> ConjugatorSample:
    """Members are words of length 1..max_length; the identity comes first when requested.

    Amplitudes are kept small so conjugates stay within the reach of the
    twist construction.
    """
    rng = np.random.default_rng(seed)
    members = [identity()] if include_identity else []
    while len(members) < size:
        length = int(rng.integers(1, max_length + 1))
        word = identity()
        for _ in range(length):
            word = word @ _random_atom_handle(rng, amplitude, flow_amplitude)
        word = Handle(word.atoms, f"alpha{len(members)}")
        members.append(word)
    return ConjugatorSample(seed, tuple(members), size, max_length)


def _random_periodic_atom(rng: np.random.Generator) -> Handle:
    kind = rng.choice(["translation", "reeb", "lifted", "value"], p=[0.4, 0.2, 0.25, 0.15])
    s = round(float(rng.uniform(0, 1)), 4)
    if kind == "translation":
        k = int(rng.integers(1, 3))
        # amplitude / k^2 keeps |f''| <= 0.8 (2 pi)^2 for every frequency
        a = round(float(rng.uniform(-0.8, 0.8)) / k ** 2, 4)
        return translation_handle(f"{a}*cos(2*pi*({k}*q - {s}))")
    if kind == "reeb":
        return reeb_handle(round(float(rng.uniform(-1.5, 1.5)), 4))
    if kind == "lifted":
        a = round(float(rng.uniform(-0.4, 0.4)), 4)
        b = round(float(rng.uniform(-0.08, 0.08)), 4)
        return flow_handle(f"{a}*plateau(p, 7) + {b}*cos(2*pi*(q - {s}))*bump(p, 0, 2)")
    a = round(float(rng.uniform(-0.3, 0.3)), 4)
    b = round(float(rng.uniform(-0.5, 0.5)), 4)
    return flow_handle(f"{a}*sin(2*pi*(z - {s})) + {b}*cos(2*pi*q)")


def periodic_handle_suite(seed: int, size: int = 20, max_length: int = 2) -> list:
    """Seeded periodic handles of word length 1..max_length.

    Atoms mix translations of amplitude up to 0.8, Reeb shifts up to 1.5,
    lifted flows (a vertical push of up to 0.4 on fronts with |p| <= 6 plus a
    weak shear) and z-periodic flows of p-independent Hamiltonians, so
    spectral values spread across several integers.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(size):
        word = identity()
        for _ in range(int(rng.integers(1, max_length + 1))):
            word = word @ _random_periodic_atom(rng)
        out.append(Handle(word.atoms, f"phi{i}"))
    return out


# --------------------------------------------------------------------------- order oracle


@dataclass
class Violated:
    """Certificate that phi <= psi fails: l_+(alpha phi psi^-1 alpha^-1) exceeds the tolerance."""

    witness: dict
    witness_index: int
    value: float
    tol: float
    kind: str = "Violated"

    def to_dict(self):
        return asdict(self)


@dataclass
class ConsistentOnSample:
    """No violation on the sample. margin = -max l_+ over the sample; this is not a proof of phi <= psi."""

    margin: float
    worst_index: int
    values: list
    tol: float
    sample_size: int
    kind: str = "ConsistentOnSample"

    def to_dict(self):
        return asdict(self)


def _check_flags(*handles: Handle, require_periodic: bool = False):
    periodic = {h.periodic for h in handles}
    if require_periodic and periodic != {True}:
        raise ValueError("periodic handles are required")
    if len(periodic) > 1:
        raise ValueError("handles belong to different groups (periodic and non-periodic)")


def order_test(phi: Handle, psi: Handle, sample: ConjugatorSample, engine: Optional[SpectralEngine] = None):
    """Tri-state test of phi <= psi: returns the first violating conjugator, or the worst margin on the sample."""
    _check_flags(phi, psi)
    engine = engine or SpectralEngine()
    chi = phi @ psi.inverse()
    words = [chi.conjugate(a) for a in sample]
    reps = engine.reports(words)
    tol = engine.config.order_tol
    values = []
    for i, (a, r) in enumerate(zip(sample, reps)):
        values.append(r.ell_plus)
        if r.ell_plus - r.uncertainty_plus > tol:
            return Violated(a.describe(), i, r.ell_plus, tol + r.uncertainty_plus)
    worst = int(np.argmax(values))
    return ConsistentOnSample(-float(values[worst]), worst, values, tol, len(sample))


# --------------------------------------------------------------------------- metrics


@dataclass
class MetricEstimate:
    rho_osc: tuple
    rho_sup: tuple
    rows: list
    action_bounds: tuple
    sample_seed: int
    note: str = "lower bounds are sample maxima; upper bounds come from the generating Hamiltonian"

    def to_dict(self):
        d = asdict(self)
        d["rho_osc"] = list(self.rho_osc)
        d["rho_sup"] = list(self.rho_sup)
        d["action_bounds"] = list(self.action_bounds)
        return d


def metric_estimate(phi: Handle, psi: Handle, sample: ConjugatorSample, engine: Optional[SpectralEngine] = None):
    """Intervals [lower, upper] for rho_osc(phi, psi) and rho_sup(phi, psi)."""
    _check_flags(phi, psi, require_periodic=True)
    engine = engine or SpectralEngine()
    cfg = engine.config
    chi = phi @ psi.inverse()
    reps = engine.reports([chi.conjugate(a) for a in sample])
    rows = []
    for i, r in enumerate(reps):
        c, f = r.ceil_plus, r.floor_minus
        rows.append({"alpha": i, "ell_minus": r.ell_minus, "ell_plus": r.ell_plus, "ceil_plus": c, "floor_minus": f,
                     "osc": c - f, "sup": max(abs(c), abs(f))})
    lo_osc = max(row["osc"] for row in rows)
    lo_sup = max(row["sup"] for row in rows)
    a, b = chi.action_bounds()
    log = engine.snap_log
    cu = robust_ceil(b, cfg.eps_int, log, "action upper bound", cfg.roundoff)
    fl = robust_floor(a, cfg.eps_int, log, "action lower bound", cfg.roundoff)
    up_osc = cu - fl
    up_sup = max(abs(cu), abs(fl))
    if lo_osc > up_osc or lo_sup > up_sup:
        raise ConsistencyError(f"metric lower bound exceeds the Hamiltonian bound: osc [{lo_osc}, {up_osc}], "
                               f"sup [{lo_sup}, {up_sup}]")
    return MetricEstimate((lo_osc, up_osc), (lo_sup, up_sup), rows, (float(a), float(b)), sample.seed)


def interval_check(phi: Handle, psi: Handle, engine: Optional[SpectralEngine] = None) -> dict:
    """Integer parts of l_+(phi(L)) and l_+(L - phi^-1(O)) for L = psi(O) and equivariant phi.

    The two values lie in the same interval (k, k + 1], so their robust
    ceilings must agree.
    """
    if not phi.equivariant:
        raise ValueError("phi must be equivariant")
    engine = engine or SpectralEngine()
    cfg = engine.config
    direct = engine.report(phi @ psi)
    pipe = Pipeline(cfg.pipeline)
    D = ominus(pipe.run(psi).gfqi, pipe.run(phi.inverse()).gfqi)
    sp = spectral_pair(D, cfg.spectral)
    eps = engine._eps(sp.snapped[1], sp.tol_spec)
    c_diff = robust_ceil(sp.ell_plus, eps, engine.snap_log, f"{psi.name} - {phi.name}^-1(O)", cfg.roundoff)
    return {"phi": phi.name, "L": psi.name, "ell_plus": direct.ell_plus, "ceil_plus": direct.ceil_plus,
            "ell_plus_difference": float(sp.ell_plus), "ceil_plus_difference": c_diff,
            "difference_dim": D.dim, "agree": direct.ceil_plus == c_diff}


# --------------------------------------------------------------------------- homogenization


@dataclass
class NuEstimate:
    powers: list
    ell_plus: list
    ell_minus: list
    per_k: list
    ceil_plus: list
    floor_minus: list
    subadditive: bool
    bracket: tuple
    estimate: float
    snaps: int

    def to_dict(self):
        d = asdict(self)
        d["bracket"] = list(self.bracket)
        return d


def nu_estimate(phi: Handle, K: int = 8, engine: Optional[SpectralEngine] = None, powers: Optional[Sequence[int]] = None):
    """Per-power data for nu(phi) = lim l_+(phi^k)/k.

    The Fekete bracket is [sup_k floor(l_-(phi^k))/k, inf_k ceil(l_+(phi^k))/k]:
    the upper end is the limit of the subadditive sequence ceil(l_+(phi^k)),
    the lower end follows from nu(phi) >= -nu(phi^-1) and duality.
    Subadditivity of ceil(l_+(phi^k)) over computed pairs is asserted.
    """
    if K < 4:
        raise ValueError("K must be at least 4")
    _check_flags(phi, require_periodic=True)
    engine = engine or SpectralEngine()
    ks = sorted(set(powers)) if powers is not None else list(range(1, K + 1))
    if ks[-1] != K:
        raise ValueError("the power schedule must end at K")
    before = engine.snap_log.count("snap")
    reps = engine.reports([phi.power(k) for k in ks])
    c = {k: r.ceil_plus for k, r in zip(ks, reps)}
    for i in ks:
        for j in ks:
            if i <= j and i + j in c and c[i + j] > c[i] + c[j]:
                raise ConsistencyError(f"ceil(l_+(phi^{i + j})) = {c[i + j]} > {c[i]} + {c[j]}: "
                                       "subadditivity fails, the pipeline is inconsistent")
    upper = min(c[k] / k for k in ks)
    lower = max(r.floor_minus / k for k, r in zip(ks, reps))
    if lower > upper:
        raise ConsistencyError(f"nu bracket is empty: [{lower}, {upper}]")
    return NuEstimate(ks, [r.ell_plus for r in reps], [r.ell_minus for r in reps],
                      [r.ell_plus / k for k, r in zip(ks, reps)], [r.ceil_plus for r in reps],
                      [r.floor_minus for r in reps], True, (lower, upper), reps[-1].ell_plus / K,
                      engine.snap_log.count("snap") - before)


# --------------------------------------------------------------------------- displaceable sets


@dataclass(frozen=True)
class Disk:
    """{(q, p): (sin(pi (q - q0)) / pi)^2 + (p - p0)^2 < r^2}, a round disk in a periodic chart."""

    q0: float
    p0: float
    r: float

    def level(self, q, p):
        return (np.sin(np.pi * (np.asarray(q) - self.q0)) / np.pi) ** 2 + (np.asarray(p) - self.p0) ** 2

    def q_extent(self) -> float:
        s = min(1.0, np.pi * self.r)
        return float(np.arcsin(s) / np.pi)

    def hamiltonian_expr(self, amplitude: float) -> str:
        """amplitude * bump of the squared chart radius: smooth, supported in the disk, maximal at its center."""
        return (f"{amplitude}*bump((sin(pi*(q - {self.q0}))/pi)**2 + (p - {self.p0})**2, 0, {self.r ** 2})")

    def sample(self, m: int = 4000, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        pts = []
        while sum(len(p) for p in pts) < m:
            q = rng.uniform(self.q0 - 0.5, self.q0 + 0.5, 4 * m)
            p = rng.uniform(self.p0 - self.r, self.p0 + self.r, 4 * m)
            ok = self.level(q, p) < self.r ** 2
            pts.append(np.stack([q[ok], p[ok]], axis=1))
        return np.concatenate(pts)[:m]


@dataclass
class DisplacementCertificate:
    region: dict
    hamiltonian: str
    energy: float
    min_image_level: float
    region_level: float
    verified: bool
    samples: int

    def to_dict(self):
        return asdict(self)


def displace_disk(disk: Disk, margin: float = 0.1, samples: int = 4000, steps: int = 200) -> DisplacementCertificate:
    """Displace the disk by the autonomous Hamiltonian f(q) = -(A / 2 pi) sin(2 pi (q - q0)).

    Its flow shifts p by A cos(2 pi (q - q0)), more than the disk's diameter on
    the disk's q-range. The energy is osc f = A / pi. The displacement is
    verified by integrating the flow of sampled disk points with a symplectic
    integrator and checking that every image lies outside the closed disk.
    """
    dq = disk.q_extent()
    c = np.cos(2 * np.pi * dq)
    if dq >= 0.25 or c <= 0:
        raise ValueError("the disk is too wide for a sinusoidal shear")
    A = 2 * disk.r * (1 + margin) / c
    two_pi = 2 * np.pi

    def dh(t, q, p):
        return -A * np.cos(two_pi * (q - disk.q0)), np.zeros_like(p)

    pts = disk.sample(samples)
    ring = np.linspace(0, 2 * np.pi, 720, endpoint=False)
    # the boundary in the chart: sin(pi dq) / pi = r cos(s)
    bq = disk.q0 + np.arcsin(np.clip(np.pi * disk.r * np.cos(ring), -1, 1)) / np.pi
    bp = disk.p0 + disk.r * np.sin(ring)
    q0 = np.concatenate([pts[:, 0], bq])
    p0 = np.concatenate([pts[:, 1], bp])
    q1, p1 = symplectic_flow(None, dh, q0, p0, 0.0, 1.0, steps=steps)
    lev = disk.level(q1, p1)
    expr = f"-({A:.6f}/(2*pi))*sin(2*pi*(q - {disk.q0}))"
    return DisplacementCertificate(asdict(disk), expr, float(A / np.pi), float(lev.min()), disk.r ** 2,
                                   bool(lev.min() > disk.r ** 2), int(q0.size))


# --------------------------------------------------------------------------- rigidity scenarios


@dataclass(frozen=True)
class RigidityConfig:
    scenario: str = "A"
    K: int = 8
    powers: Optional[tuple] = (1, 2, 4, 8)
    sample_seed: int = 0
    sample_size: int = 24
    tol: float = 1e-2
    # scenario A: h = 1 on the zero section, 0 <= h <= 1
    cap_expr: str = "plateau(p, 3)"
    conjugator: str = "0.3*cos(2*pi*q)"
    # scenario B: two commuting flows with displaceable supports, and a comparison Hamiltonian
    disk_far: Disk = Disk(0.25, 0.75, 0.2)
    amplitude_far: float = 1.0
    disk_near: Disk = Disk(0.25, 0.0, 0.15)
    amplitude_near: float = 5e-4
    comparison_expr: str = "0.5*bump(p, 0, 1)"
    comparison_c: float = 0.5


def _nu_row(label: str, est: NuEstimate, target: Optional[float] = None, tol: float = 0.0):
    row = {"case": label, "estimate": est.estimate, "bracket": list(est.bracket), "per_k": est.per_k,
           "powers": est.powers}
    if target is not None:
        row["target"] = target
        row["passed"] = bool(abs(est.estimate - target) <= tol)
    return row


def rigidity_scenarios(config: RigidityConfig = RigidityConfig(), engine: Optional[SpectralEngine] = None) -> dict:
    """Scenario A: nu of a cap flow is 1 and conjugation invariant. Scenario B: displaceable commuting supports give nu = 0."""
    engine = engine or SpectralEngine()
    K, tol = config.K, config.tol
    powers = config.powers
    rows = []
    if config.scenario == "A":
        phi = flow_handle(config.cap_expr, name="cap")
        est = nu_estimate(phi, K, engine, powers)
        rows.append(_nu_row("alpha = id", est, 1.0, tol))
        alpha = translation_handle(config.conjugator, name="T")
        est = nu_estimate(phi.conjugate(alpha), K, engine, powers)
        rows.append(_nu_row(f"alpha = T[{config.conjugator}]", est, 1.0, tol))
        sample = conjugator_sample(config.sample_seed, config.sample_size)
        reps = engine.reports([phi.power(K).conjugate(a) for a in sample])
        for i, r in enumerate(reps):
            v = r.ell_plus / K
            rows.append({"case": f"sample alpha{i}", "estimate": v, "powers": [K], "target": 1.0,
                         "passed": bool(abs(v - 1.0) <= tol)})
        passed = all(r["passed"] for r in rows)
        return {"scenario": "A", "rows": rows, "passed": passed, "K": K, "tol": tol,
                "sample": sample.describe()}
    if config.scenario == "B":
        cert_far = displace_disk(config.disk_far)
        cert_near = displace_disk(config.disk_near)
        phi1 = flow_handle(config.disk_far.hamiltonian_expr(config.amplitude_far), name="phi1")
        phi2 = flow_handle(config.disk_near.hamiltonian_expr(config.amplitude_near), name="phi2")
        bound = (cert_far.energy + cert_near.energy) / K + tol
        est12 = nu_estimate(phi1 @ phi2, K, engine, powers)
        row = _nu_row("phi1 phi2", est12)
        row["bound"] = bound
        row["passed"] = bool(abs(est12.estimate) <= bound)
        rows.append(row)
        for label, ph, cert in (("phi1", phi1, cert_far), ("phi2", phi2, cert_near)):
            e = nu_estimate(ph, K, engine, powers)
            r = _nu_row(label, e)
            r["bound"] = cert.energy / K + tol
            r["per_k_bounded"] = bool(all(abs(x) * k <= cert.energy + tol for x, k in zip(e.per_k, e.powers)))
            r["passed"] = bool(abs(e.estimate) <= r["bound"] and r["per_k_bounded"])
            rows.append(r)
        comp = nu_estimate(flow_handle(config.comparison_expr, name="comparison"), K, engine, powers)
        r = _nu_row("comparison H >= c on the zero wall", comp)
        r["c"] = config.comparison_c
        r["passed"] = bool(comp.estimate >= config.comparison_c - tol)
        rows.append(r)
        passed = all(r["passed"] for r in rows) and cert_far.verified and cert_near.verified
        return {"scenario": "B", "rows": rows, "passed": passed, "K": K, "tol": tol,
                "displacements": [cert_far.to_dict(), cert_near.to_dict()]}
    raise ValueError(f"unknown scenario {config.scenario!r}; expected 'A' or 'B'")
