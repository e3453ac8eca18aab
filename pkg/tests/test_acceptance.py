"""Acceptance checks. Each test prints one PASS/FAIL line.

Run alone with ``python3 -m pytest tests/test_acceptance.py -s`` or
``python3 tests/test_acceptance.py``.
"""

import hashlib
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from gfspec.cli import main as cli_main
from gfspec.dynamics import parse_hamiltonian
from gfspec.families import cerf_diagram, family_for_isotopy, slope_check, validate_family
from gfspec.genfun import gfqi_from_base_function, negate, ominus, oplus
from gfspec.handles import flow_handle, identity, reeb_handle, translation_handle
from gfspec.homology import (SpectralConfig, barcode_relative_betti, brute_relative_betti, random_lattice_filtration,
                             reduce, spectral_pair)
from gfspec.invariants import (ConsistentOnSample, RigidityConfig, SpectralEngine, Violated, conjugator_sample,
                               interval_check, metric_estimate, nu_estimate, order_test, periodic_handle_suite,
                               rigidity_scenarios)

sys.path.insert(0, str(Path(__file__).parent))
from conftest import dense_extrema, trig_poly  # noqa: E402

CONFIGS = Path(__file__).resolve().parent.parent / "scripts" / "configs"
JET = SpectralConfig(n=256, resolution=64)
PAIR = SpectralConfig(n=128, resolution=32)
BASE_FAMILY = ["0.7*cos(2*pi*q)", "0.4*sin(2*pi*q) + 0.2*cos(4*pi*q)", "0.5*cos(2*pi*q)*(1 + 0.5*sin(2*pi*t))",
               "0.3*sin(2*pi*(q - t))", "0.25 + 0.3*cos(6*pi*q)"]
LIFTED_FAMILY = ["0.15*cos(2*pi*q)*bump(p, 0, 1.5)", "0.1*sin(2*pi*q)*bump(p, 0, 2)",
                 "(0.2 + 0.1*cos(2*pi*q))*bump(p, 0, 2)", "0.1*cos(2*pi*(q - t))*bump(p, 0, 1.5)",
                 "0.3*bump(p, 0, 1)"]


@pytest.fixture
def emit(capsys):
    def _emit(name, passed, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if passed else 'FAIL'} {name}: {detail}", flush=True)
    return _emit


def jet_suite(count=20, seed=2024):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        f, df, _ = trig_poly(rng, degree=int(rng.integers(1, 5)), amplitude=2.0)
        out.append((f, df))
    return out


def jet(f, df):
    return gfqi_from_base_function(f, df)


def lipschitz(df):
    return float(np.max(np.abs(df(np.linspace(0, 1, 200001)))))


# --------------------------------------------------------------------------- generating functions


def test_jet_oracle(emit):
    t0 = time.perf_counter()
    worst, ok = 0.0, True
    for f, df in jet_suite():
        sp = spectral_pair(jet(f, df), JET)
        lo, hi = dense_extrema(f)
        tol = 2 * lipschitz(df) / JET.n
        err = max(abs(sp.ell_minus - lo), abs(sp.ell_plus - hi))
        worst = max(worst, err / tol)
        ok &= err <= tol
    dt = time.perf_counter() - t0
    ok &= dt < 60
    emit("jet oracle", ok, f"20 jets, worst error / (2 Lip/n) = {worst:.3g}, {dt:.1f} s")
    assert ok


def test_duality(emit):
    worst, ok = 0.0, True
    for f, df in jet_suite():
        S = jet(f, df)
        a, b = spectral_pair(S, JET), spectral_pair(negate(S), JET)
        tol = 2 * max(a.tol_spec, b.tol_spec)
        err = abs(a.ell_plus + b.ell_minus)
        worst = max(worst, err / tol)
        ok &= err <= tol
    emit("duality", ok, f"20 jets, worst |l+(L) + l-(-L)| / (2 tol_spec) = {worst:.3g}")
    assert ok


def test_triangle(emit):
    t0 = time.perf_counter()
    suite = jet_suite(20, seed=99)
    ok, worst_plus, worst_mixed = True, -np.inf, -np.inf
    for i in range(10):
        (f, df), (g, dg) = suite[2 * i], suite[2 * i + 1]
        S, T = jet(f, df), jet(g, dg)
        a, b, c = spectral_pair(S, PAIR), spectral_pair(T, PAIR), spectral_pair(oplus(S, T), PAIR)
        tol = 3 * max(a.tol_spec, b.tol_spec, c.tol_spec)
        worst_plus = max(worst_plus, c.ell_plus - a.ell_plus - b.ell_plus - tol)
        worst_mixed = max(worst_mixed, c.ell_minus - a.ell_minus - b.ell_plus - tol)
        ok &= c.ell_plus <= a.ell_plus + b.ell_plus + tol and c.ell_minus <= a.ell_minus + b.ell_plus + tol
    dt = time.perf_counter() - t0
    ok &= dt < 600
    emit("triangle", ok, f"10 pairs of fiber dim 1 + 1, worst excess {worst_plus:.3g} (max), "
                         f"{worst_mixed:.3g} (mixed), {dt:.1f} s")
    assert ok


def test_zero_law(emit):
    ok, worst = True, 0.0
    for f, df in jet_suite(10, seed=7):
        S = jet(f, df)
        sp = spectral_pair(ominus(S, S), PAIR)
        err = max(abs(sp.ell_minus), abs(sp.ell_plus))
        worst = max(worst, err / (2 * sp.tol_spec))
        ok &= err <= 2 * sp.tol_spec
    emit("zero law", ok, f"10 differences L - L, worst |l| / (2 tol_spec) = {worst:.3g}")
    assert ok


# --------------------------------------------------------------------------- homology engine


def test_homology_oracle(emit):
    t0 = time.perf_counter()
    ok, pairs = True, 0
    for seed in range(50):
        filt = random_lattice_filtration(np.random.default_rng(seed), max_cells=300)
        res = reduce(filt)
        levels = np.unique(np.concatenate([[filt.b], filt.values]))
        levels = levels[np.isfinite(levels)]
        for i, b in enumerate(levels):
            for a in levels[i:]:
                pairs += 1
                ok &= bool(np.array_equal(barcode_relative_betti(res, filt.maxdim, a, b),
                                          brute_relative_betti(filt, a, b)))
    dt = time.perf_counter() - t0
    ok &= dt < 60
    emit("homology oracle", ok, f"50 filtrations, {pairs} sublevel pairs, exact agreement, {dt:.1f} s")
    assert ok


# --------------------------------------------------------------------------- families


@pytest.fixture(scope="module")
def families():
    out = []
    for expr in BASE_FAMILY + LIFTED_FAMILY:
        H = parse_hamiltonian(expr)
        fam = family_for_isotopy(H, m=17 if expr in BASE_FAMILY else 5, check=False, label=expr)
        out.append((expr, H, fam, validate_family(fam)))
    return out


def test_flow_family_consistency(emit, families):
    ok, worst_front, worst_margin = True, 0.0, np.inf
    for expr, H, fam, rep in families:
        ok &= rep.front_distance <= rep.tol_front
        ok &= not rep.skipped
        for r in rep.increment_rows:
            ok &= r["lower"] - r["tol"] <= r["dl_minus"] and r["dl_plus"] <= r["upper"] + r["tol"]
            worst_margin = min(worst_margin, r["margin"])
        worst_front = max(worst_front, rep.front_distance)
    emit("flow/family consistency", ok, f"10 generators, worst Hausdorff {worst_front:.3g} (tol "
                                        f"{families[0][3].tol_front:.3g}), worst increment margin "
                                        f"{worst_margin:.3g}")
    assert ok


def test_cerf_slope(emit, families):
    ok, worst_ratio = True, 0.0
    for expr, H, fam, _ in families[:len(BASE_FAMILY)]:
        _, _, mins, maxs = H.extrema(0.0, 1.0)
        max_h = float(max(np.abs(mins).max(), np.abs(maxs).max()))
        passed, worst, tol = slope_check(cerf_diagram(fam), max_h)
        ok &= passed
        worst_ratio = max(worst_ratio, worst / tol)
    emit("Cerf slope", ok, f"{len(BASE_FAMILY)} families of H = f(t, q), worst |slope - H| / tol = {worst_ratio:.3g}")
    assert ok


# --------------------------------------------------------------------------- invariants


@pytest.fixture(scope="module")
def engine():
    return SpectralEngine()


@pytest.fixture(scope="module")
def sample():
    return conjugator_sample(0, 24)


def test_integer_embedding(emit, engine, sample):
    cap = "plateau(p, 3)"
    phis = {k: (flow_handle(cap, float(k), name=f"phi_{k}H") if k else identity()) for k in range(6)}
    ok, lines = True, []
    for k in range(1, 6):
        est = metric_estimate(phis[k], identity(), sample, engine)
        ok &= est.rho_sup == (k, k)
        lines.append(f"k={k}: {list(est.rho_sup)}")
    for k in range(4):
        for m in range(4):
            if k == m:
                continue
            est = metric_estimate(phis[k], phis[m], sample, engine)
            ok &= est.rho_sup[0] == abs(k - m) == est.rho_sup[1]
    emit("integer embedding", ok, "rho_sup(phi_kH, id) " + ", ".join(lines) + "; |k - m| for k, m <= 3")
    assert ok


def test_integer_part_calculus(emit, engine, sample):
    t0 = time.perf_counter()
    suite = periodic_handle_suite(0, 20)
    before_ops = len(engine.snap_log.events)
    ok, comparisons, failures = True, 0, []
    reps = {h.name: engine.report(h) for h in suite}
    for h in suite:
        inv = engine.report(h.inverse())
        comparisons += 2
        if reps[h.name].ceil_plus != -inv.floor_minus:
            failures.append(f"duality {h.name}")
    for phi, psi in zip(suite, suite[1:] + suite[:1]):
        a, b, ab = reps[phi.name], reps[psi.name], engine.report(phi @ psi)
        comparisons += 4
        checks = [ab.ceil_plus <= a.ceil_plus + b.ceil_plus, ab.floor_minus >= a.floor_minus + b.floor_minus,
                  ab.floor_minus <= a.floor_minus + b.ceil_plus, ab.floor_minus <= a.ceil_plus + b.floor_minus]
        failures += [f"triangle {i} {phi.name} {psi.name}" for i, c in enumerate(checks) if not c]
    for h in suite:
        lo, hi = h.action_bounds()
        f, c = math.floor(lo), math.ceil(hi)
        for alpha in sample:
            r = engine.report(h.conjugate(alpha))
            comparisons += 2
            if not (f <= r.floor_minus and r.ceil_plus <= c):
                failures.append(f"conjugation {h.name} {alpha.name}")
    snaps = sum(1 for e in engine.snap_log.events[before_ops:] if e.kind == "snap")
    rate = snaps / comparisons
    ok = not failures and rate < 0.05
    dt = time.perf_counter() - t0
    emit("integer-part calculus", ok, f"20 handles x 24 conjugators, {comparisons} comparisons, "
                                      f"{len(failures)} failures, snap rate {rate:.2%}, {dt:.0f} s")
    assert ok, failures


def test_interval_property(emit, engine):
    phis = [h for h in periodic_handle_suite(3, 60) if h.equivariant][:10]
    Ls = periodic_handle_suite(4, 9)
    Ls = [flow_handle("0.2*sin(2*pi*(z - 0.1)) + 0.4*cos(2*pi*q)", name="V")] + Ls
    rows = [interval_check(phi, L, engine) for phi, L in zip(phis, Ls)]
    ok = len(rows) == 10 and all(r["agree"] for r in rows)
    zdep = sum(1 for L in Ls if not L.equivariant)
    emit("same-interval property", ok, f"{len(rows)} cases ({zdep} with z-dependent periodic generators), "
                                       f"{sum(r['agree'] for r in rows)} agree")
    assert ok


def test_homogenization(emit, engine):
    t0 = time.perf_counter()
    ok, parts = True, []
    for c in (0.5, -0.3, 1.25):
        est = nu_estimate(reeb_handle(c), 8, engine, (1, 2, 4, 8))
        ok &= abs(est.estimate - c) <= 1e-3
    parts.append("Reeb ok" if ok else "Reeb off")
    b = rigidity_scenarios(RigidityConfig(scenario="B"), engine)
    row, wall = b["rows"][0], b["rows"][-1]
    ok &= wall["passed"]
    parts.append(f"zero wall {wall['estimate']:.4f} >= {wall['c'] - 1e-2:.2f}")
    ok &= abs(row["estimate"]) <= row["bound"] and b["passed"]
    parts.append(f"displaceable {row['estimate']:.2g} <= {row['bound']:.3g}")
    a = rigidity_scenarios(RigidityConfig(scenario="A", sample_size=24), engine)
    conj = a["passed"]
    ok &= conj
    dev = max(abs(r["estimate"] - 1.0) for r in a["rows"])
    parts.append(f"conjugation invariance worst deviation {dev:.2g} over {len(a['rows'])} rows")
    dt = time.perf_counter() - t0
    ok &= dt < 1800
    emit("homogenization", ok, "; ".join(parts) + f"; {dt:.0f} s")
    assert ok


def test_order_oracle(emit, engine, sample):
    phi = flow_handle("0.05*sin(2*pi*q)*bump(p, 0, 1)")
    refl = order_test(phi, phi, sample, engine)
    ok = isinstance(refl, ConsistentOnSample) and abs(refl.margin) <= 1e-9
    cert = order_test(reeb_handle(1.0), identity(), sample, engine)
    ok &= isinstance(cert, Violated) and cert.witness_index == 0 and abs(cert.value - 1.0) <= 1e-9
    monotone = [(identity(), flow_handle("0.3*bump(p, 0, 3)")),
                (translation_handle("0.2*cos(2*pi*q)"), translation_handle("0.2*cos(2*pi*q) + 0.1")),
                (flow_handle("0.1*cos(2*pi*q)*bump(p, 0, 3)"),
                 flow_handle("(0.1*cos(2*pi*q) + 0.2)*bump(p, 0, 3)"))]
    verdicts = [order_test(h, k, sample, engine) for h, k in monotone]
    ok &= all(isinstance(v, ConsistentOnSample) for v in verdicts)
    emit("order oracle", ok, f"reflexive margin {refl.margin:.2g}; Reeb(1) vs id -> {cert.kind} "
                             f"value {getattr(cert, 'value', float('nan')):.4g}; monotone pairs -> "
                             f"{[v.kind for v in verdicts]}")
    assert ok


# --------------------------------------------------------------------------- determinism


def test_determinism(emit, tmp_path):
    configs = sorted(CONFIGS.glob("*.yaml"))
    digests = []
    codes = []
    for run in ("a", "b"):
        d = {}
        for cfg in configs:
            kind = cfg.read_text().split("kind:")[1].split()[0]
            out = tmp_path / run / cfg.stem
            codes.append(cli_main([kind, "--config", str(cfg), "--out", str(out)]))
            for p in sorted(out.glob("*.json")):
                d[f"{cfg.stem}/{p.name}"] = hashlib.sha256(p.read_bytes()).hexdigest()
        digests.append(d)
    ok = digests[0] == digests[1] and len(digests[0]) == len(configs) and all(c == 0 for c in codes)
    emit("determinism", ok, f"{len(configs)} scenario configs run twice, {len(digests[0])} JSON artifacts, "
                            f"identical={digests[0] == digests[1]}, exit codes {sorted(set(codes))}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
