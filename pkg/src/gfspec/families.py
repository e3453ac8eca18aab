"""Families S_t generating phi_H^t(O), their Cerf diagrams, and the checks that certify them.

Supported isotopies:

* H = f(t, q): S_t = F_t(q) with F_t the time integral of H (exact); adding e^2 gives
  the same spectral data.
* H = c: S_t = S_0 + c t (exact).
* H lifted from T*S^1 with compact p-support, or p-independent and periodic in z:
  S_t is the pipeline generating function of the time-t map applied to O,
  optionally after a start handle and inside a conjugation alpha (.) alpha^-1.

Every family built with ``check=True`` must pass two obligations before it is
returned: the front of S_1 lies within 5/n of the independently transported
front, and every consecutive increment of l_+- is bounded by the time step times
the extreme values of H on the swept front.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .dynamics import ContactHamiltonian, UnsupportedHamiltonian, integrate, zero_section_front
from .genfun import (Gfqi, LegendrianFront, PeriodicFunction, QuadraticForm, critical_spectrum, graphical_gfqi,
                     hausdorff_distance, ominus, shift_by_function, spectrum, stabilize, wavefront, zero_section)
from .grid import CircleGrid
from .handles import Flow, Handle, Pipeline, PipelineConfig, flow_points
from .homology import SpectralConfig, spectral_pair


class FamilyValidationError(RuntimeError):
    """A constructed family failed a certification obligation."""

    def __init__(self, obligation: str, detail: str, witness=None):
        super().__init__(f"{obligation}: {detail}")
        self.obligation = obligation
        self.witness = witness


@dataclass(frozen=True)
class FamilyConfig:
    m: int = 17
    k: int = 32
    n_front: int = 256
    wavefront_resolution: int = 32
    spectral: SpectralConfig = SpectralConfig(n=256, resolution=32)
    pipeline: PipelineConfig = PipelineConfig()
    substeps: int = 4
    increment_slack: float = 1e-6


@dataclass
class GfqiFamily:
    """Generating functions at increasing times with the transported fronts at the same times.

    ``members`` share one fiber dimension (lower-dimensional members are stabilized);
    ``reduced`` holds the unstabilized functions, which have the same spectral data.
    """

    times: np.ndarray
    reduced: list
    fronts: list
    hamiltonian: Optional[ContactHamiltonian]
    kind: str
    label: str = ""
    conjugator: Optional[Handle] = None
    start: Optional[Handle] = None
    log: list = field(default_factory=list)

    @property
    def members(self) -> list:
        d = max(S.dim for S in self.reduced)
        out = []
        for S in self.reduced:
            gap = d - S.dim
            if gap == 0:
                out.append(S)
                continue
            coeffs = (1.0, -1.0) * (gap // 2) + ((1.0,) if gap % 2 else ())
            out.append(stabilize(S, QuadraticForm(coeffs)))
        return out

    @property
    def dim(self) -> int:
        return max(S.dim for S in self.reduced)

    def hamiltonian_on(self, t: float, pts: np.ndarray) -> np.ndarray:
        """Generator of the family's path evaluated at points of L_t.

        A conjugation by a z-independent alpha preserves the contact form, so the
        conjugated generator is H o alpha^-1.
        """
        if self.hamiltonian is None:
            raise ValueError("family has no generating Hamiltonian")
        x = pts
        if self.conjugator is not None:
            x = flow_points(self.conjugator.inverse().atoms, pts)
        return self.hamiltonian(t, x[:, 0], x[:, 1], x[:, 2])

    def transport(self, i: int, t: float) -> np.ndarray:
        """Points of L_t for t in [t_i, t_{i+1}], moved from the stored front at t_i."""
        pts = self.fronts[i].points
        if self.conjugator is not None:
            a = self.conjugator
            pts = flow_points(a.inverse().atoms, pts)
            pts = integrate(self.hamiltonian, pts, self.times[i], t)
            return flow_points(a.atoms, pts)
        return integrate(self.hamiltonian, pts, self.times[i], t)


def _is_constant(H: ContactHamiltonian, samples: int = 256) -> Optional[float]:
    if not (H.p_independent and H.z_independent and H.autonomous):
        return None
    rng = np.random.default_rng(3)
    v = H(0.0, rng.random(samples), 0.0, 0.0)
    return float(v[0]) if np.ptp(v) < 1e-14 else None


def _time_integral(H: ContactHamiltonian, t: float) -> PeriodicFunction:
    return Flow(H, 0.0, float(t)).shift_function()


def family_for_isotopy(H: ContactHamiltonian, k: int = 32, m: int = 17, *, conjugator: Optional[Handle] = None,
                       start: Optional[Handle] = None, config: FamilyConfig = FamilyConfig(), check: bool = True,
                       label: str = "") -> GfqiFamily:
    """Generating functions of phi_H^t(O) at m equally spaced times in [0, 1].

    ``k`` caps how many pieces a flow may be cut into when a single piece
    violates the twist condition. With ``conjugator`` alpha the family generates
    alpha phi_H^t alpha^-1 (O); with ``start`` psi it generates phi_H^t psi (O).
    """
    if m < 2:
        raise ValueError("need at least two time samples")
    kind = H.kind
    if kind == "unsupported":
        raise UnsupportedHamiltonian(f"{H.label}: no generating-function construction for H depending on p and z")
    times = np.linspace(0.0, 1.0, m)
    c = _is_constant(H)
    plain = conjugator is None and start is None
    members, fronts, log = [], [], []
    if plain and c is not None:
        fam_kind = "constant"
        S0 = zero_section()
        for t in times:
            members.append(shift_by_function(S0, PeriodicFunction.constant(c * t)))
            fronts.append(_flow_front(H, t, config.n_front))
    elif plain and kind == "base":
        fam_kind = "base"
        for t in times:
            members.append(graphical_gfqi(_time_integral(H, t)))
            fronts.append(_flow_front(H, t, config.n_front))
    else:
        fam_kind = "pipeline"
        split = max(1, int(math.ceil(math.log2(max(k, 2)))))
        pcfg = replace(config.pipeline, front_points=max(config.pipeline.front_points, 4 * config.n_front),
                       split_depth=split)
        pipe = Pipeline(pcfg)
        for t in times:
            word = Handle((Flow(H, 0.0, float(t), H.label),) if t > 0 else (), f"flow[{H.label}]^{t:.4g}")
            if start is not None:
                word = word @ start
            if conjugator is not None:
                word = word.conjugate(conjugator)
            res = pipe.run(word)
            members.append(res.gfqi)
            fronts.append(res.front)
            log.append({"t": float(t), "steps": res.log, "dim": res.gfqi.dim})
    fam = GfqiFamily(times, members, fronts, H, fam_kind, label or H.label, conjugator, start, log)
    if check:
        report = validate_family(fam, config=config)
        for ob in report.obligations:
            if not ob.passed:
                raise FamilyValidationError(ob.name, ob.detail, ob.witness)
    return fam


def _flow_front(H: ContactHamiltonian, t: float, n: int) -> LegendrianFront:
    """O moved by the flow of H to time t (RK4 transport)."""
    front = zero_section_front(4 * n)
    if t == 0:
        return front
    Y = integrate(H, front.points, 0.0, t)
    Y[:, 0] = np.mod(Y[:, 0], 1.0)
    return LegendrianFront(Y, front.branch.copy(), dict(front.closed), front.tol_leg)


def difference_family(a: GfqiFamily, b: GfqiFamily, label: str = "") -> GfqiFamily:
    """Members S^a_t (-) S^b_t on common times; the result carries no single generator."""
    if len(a.times) != len(b.times) or np.max(np.abs(a.times - b.times)) > 1e-12:
        raise ValueError("families must share their time samples")
    members = [ominus(x, y) for x, y in zip(a.reduced, b.reduced)]
    return GfqiFamily(a.times.copy(), members, [], None, "difference", label or f"{a.label} - {b.label}")


# --------------------------------------------------------------------------- validation


@dataclass
class Obligation:
    name: str
    passed: bool
    margin: float
    detail: str = ""
    witness: object = None


@dataclass
class FamilyReport:
    label: str
    obligations: list
    increment_rows: list = field(default_factory=list)
    monotone_rows: list = field(default_factory=list)
    front_distance: float = float("nan")
    tol_front: float = float("nan")
    skipped: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(o.passed for o in self.obligations)

    def to_dict(self) -> dict:
        return {"label": self.label, "passed": self.passed,
                "obligations": [{"name": o.name, "passed": o.passed, "margin": o.margin, "detail": o.detail}
                                for o in self.obligations],
                "increments": self.increment_rows, "monotone": self.monotone_rows, "front_distance": self.front_distance,
                "tol_front": self.tol_front, "skipped": self.skipped}


def swept_extrema(fam: GfqiFamily, i: int, substeps: int = 4):
    """min and max of the generator over L_t for t in [t_i, t_{i+1}], sampled on transported fronts."""
    t0, t1 = fam.times[i], fam.times[i + 1]
    lo, hi = np.inf, -np.inf
    for s in np.linspace(0.0, 1.0, substeps + 1):
        t = t0 + s * (t1 - t0)
        pts = fam.transport(i, t)
        h = fam.hamiltonian_on(t, pts)
        lo, hi = min(lo, float(h.min())), max(hi, float(h.max()))
    return lo, hi


def increment_rows(fam: GfqiFamily, config: FamilyConfig = FamilyConfig()):
    """Per consecutive pair: the increments of l_+- and the bounds from the swept extrema of H."""
    rows, skipped = [], []
    for i in range(len(fam.times) - 1):
        D = ominus(fam.reduced[i + 1], fam.reduced[i])
        if D.dim > config.spectral.d_max:
            skipped.append({"pair": i, "reason": f"difference has {D.dim} fiber variables"})
            continue
        sp = spectral_pair(D, config.spectral)
        dt = float(fam.times[i + 1] - fam.times[i])
        lo, hi = swept_extrema(fam, i, config.substeps)
        tol = sp.tol_spec + config.increment_slack
        rows.append({"pair": i, "t0": float(fam.times[i]), "t1": float(fam.times[i + 1]), "dl_minus": sp.ell_minus,
                     "dl_plus": sp.ell_plus, "lower": dt * lo, "upper": dt * hi, "tol": tol,
                     "margin": min(sp.ell_minus - dt * lo + tol, dt * hi + tol - sp.ell_plus)})
    return rows, skipped


def validate_family(fam: GfqiFamily, H: Optional[ContactHamiltonian] = None, *, comparison: Optional[GfqiFamily] = None,
                    config: FamilyConfig = FamilyConfig()) -> FamilyReport:
    """Front agreement, localized increment bounds, and (if given) monotonicity against a larger generator."""
    if H is not None and fam.hamiltonian is None:
        fam.hamiltonian = H
    obligations = []
    rep = FamilyReport(fam.label, obligations)
    if fam.fronts:
        grid = CircleGrid(config.n_front)
        S1 = fam.reduced[-1]
        wf = wavefront(S1, grid, None, config.wavefront_resolution)
        dist = hausdorff_distance(wf, fam.fronts[-1], 0.2 / config.n_front)
        tol_front = 5.0 / config.n_front
        rep.front_distance, rep.tol_front = dist, tol_front
        obligations.append(Obligation("front", dist <= tol_front, tol_front - dist,
                                      f"Hausdorff distance {dist:.3e} vs {tol_front:.3e}"))
    if fam.hamiltonian is not None and fam.fronts:
        rows, skipped = increment_rows(fam, config)
        rep.increment_rows, rep.skipped = rows, skipped
        worst = min(rows, key=lambda r: r["margin"]) if rows else None
        ok = all(r["margin"] >= 0 for r in rows)
        obligations.append(Obligation("increment-bounds", ok, worst["margin"] if worst else float("inf"),
                                      f"worst pair {worst['pair']}: [{worst['lower']:.4g}, {worst['upper']:.4g}] vs "
                                      f"({worst['dl_minus']:.4g}, {worst['dl_plus']:.4g})" if worst else "no pairs",
                                      worst))
    if comparison is not None:
        mrows = []
        for t, S, Sk in zip(fam.times, fam.reduced, comparison.reduced):
            a = spectral_pair(S, config.spectral)
            b = spectral_pair(Sk, config.spectral)
            tol = a.tol_spec + b.tol_spec
            mrows.append({"t": float(t), "plus": a.ell_plus, "plus_cmp": b.ell_plus, "minus": a.ell_minus,
                          "minus_cmp": b.ell_minus, "tol": tol,
                          "margin": min(b.ell_plus - a.ell_plus, b.ell_minus - a.ell_minus) + tol})
        rep.monotone_rows = mrows
        worst = min(mrows, key=lambda r: r["margin"])
        obligations.append(Obligation("monotone", worst["margin"] >= 0, worst["margin"],
                                      f"worst t={worst['t']:.4g}", worst))
    return rep


def corrupt_family(fam: GfqiFamily, index: int, dz: float = 0.1) -> GfqiFamily:
    """Copy with S_{t_index} shifted by dz (its front moved up by dz as well)."""
    red = list(fam.reduced)
    red[index] = shift_by_function(red[index], PeriodicFunction.constant(dz))
    fronts = list(fam.fronts)
    if fronts:
        P = fronts[index].points.copy()
        P[:, 2] += dz
        fronts[index] = LegendrianFront(P, fronts[index].branch, dict(fronts[index].closed), fronts[index].tol_leg)
    return GfqiFamily(fam.times.copy(), red, fronts, fam.hamiltonian, fam.kind, fam.label + "+corrupt",
                      fam.conjugator, fam.start, fam.log)


# --------------------------------------------------------------------------- Cerf diagrams


@dataclass
class CerfPoint:
    t: float
    c: float
    q: float
    p: float
    z: float
    branch: int = -1
    slope: float = float("nan")
    h: float = float("nan")


@dataclass
class CerfDiagram:
    points: list
    clustered: list = field(default_factory=list)

    def branch(self, b: int) -> list:
        return [p for p in self.points if p.branch == b]

    @property
    def branches(self) -> list:
        return sorted({p.branch for p in self.points})

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "c", "q", "p", "branch"])
            for pt in self.points:
                w.writerow([repr(pt.t), repr(pt.c), repr(pt.q), repr(pt.p), pt.branch])


def _critical_points(S: Gfqi, n: int, resolution: int):
    grid = CircleGrid(n)
    if S.dim == 0:
        res = spectrum(S, grid, None, 64, tol_cluster=1e-9)
    else:
        res, _ = critical_spectrum(S, grid, None, resolution, tol_cluster=1e-9)
    return res.values, res.points


def cerf_diagram(fam: GfqiFamily, S_ref: Optional[Gfqi] = None, *, n: int = 256, resolution: int = 24,
                 link_tol: Optional[float] = None) -> CerfDiagram:
    """Critical values of S_t (-) S_ref against t, linked into branches, with slopes and H at the representing points."""
    S_ref = S_ref if S_ref is not None else zero_section()
    raw = []
    for t, S in zip(fam.times, fam.reduced):
        D = ominus(S, S_ref)
        vals, pts = _critical_points(D, n, resolution)
        layer = []
        for c, x in zip(vals, pts):
            q = float(np.mod(x[0], 1.0))
            e = x[1:1 + S.dim]
            sv, sq, _ = S.value_and_grad(np.array([q]), e[None, :])
            layer.append(CerfPoint(float(t), float(c), q, float(-sq[0]), float(sv[0])))
        raw.append(layer)
    link_tol = link_tol if link_tol is not None else 0.1
    # greedy linking in (q on the circle, c)
    next_id = 0
    prev = []
    clustered = []
    for layer in raw:
        vals = sorted(pt.c for pt in layer)
        for a, b in zip(vals, vals[1:]):
            if b - a < 1e-6:
                clustered.append({"t": layer[0].t, "c": a})
        used = set()
        for pt in sorted(layer, key=lambda x: x.c):
            best, bd = None, np.inf
            for j, pp in enumerate(prev):
                if j in used:
                    continue
                dq = abs((pt.q - pp.q + 0.5) % 1.0 - 0.5)
                dist = dq + abs(pt.c - pp.c)
                if dist < bd:
                    best, bd = j, dist
            if best is not None and bd <= link_tol:
                pt.branch = prev[best].branch
                used.add(best)
            else:
                pt.branch = next_id
                next_id += 1
        prev = layer
    points = [pt for layer in raw for pt in layer]
    H = fam.hamiltonian
    for b in {p.branch for p in points}:
        br = sorted((p for p in points if p.branch == b), key=lambda p: p.t)
        if len(br) < 2:
            continue
        ts = np.array([p.t for p in br])
        cs = np.array([p.c for p in br])
        # second-order differences, one-sided at the branch ends
        slopes = np.gradient(cs, ts, edge_order=2 if len(br) >= 3 else 1)
        for pt, sl in zip(br, slopes):
            pt.slope = float(sl)
            if H is not None:
                pt.h = float(fam.hamiltonian_on(pt.t, np.array([[pt.q, pt.p, pt.z]]))[0])
    return CerfDiagram(points, clustered)


def slope_check(diagram: CerfDiagram, max_abs_h: float, rel_tol: float = 0.05):
    """Worst |slope - H| over branch points with a defined slope; passes when below rel_tol * max|H|."""
    errs = [abs(p.slope - p.h) for p in diagram.points if np.isfinite(p.slope) and np.isfinite(p.h)]
    worst = max(errs) if errs else 0.0
    tol = rel_tol * max_abs_h
    return worst <= tol, worst, tol
