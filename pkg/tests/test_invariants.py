import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gfspec.handles import flow_handle, identity, reeb_handle, translation_handle
from gfspec.invariants import (ConsistencyError, ConsistentOnSample, Disk, RigidityConfig, SnapLog, Violated,
                               conjugator_sample, displace_disk, interval_check, metric_estimate, nu_estimate,
                               order_test, periodic_handle_suite, rigidity_scenarios, robust_ceil, robust_floor)

from conftest import dense_extrema

CAP = "plateau(p, 3)"  # 1 on a neighbourhood of the zero section, 0 <= h <= 1


@pytest.fixture(scope="module")
def suite():
    return periodic_handle_suite(0, 8)


@pytest.fixture(scope="module")
def small_sample():
    return conjugator_sample(0, size=4)


# --------------------------------------------------------------------------- robust integer parts

def test_robust_integer_examples():
    assert robust_ceil(1.0000003, 1e-4) == 1
    assert robust_ceil(0.4) == 1 and robust_floor(0.4) == 0
    assert robust_floor(-0.9999999, 1e-4) == -1
    assert robust_ceil(2.0) == 2 and robust_floor(-3.0) == -3


@given(st.floats(-50, 50, allow_nan=False), st.floats(0, 0.49))
def test_robust_integer_parts_bracket(x, eps):
    c, f = robust_ceil(x, eps), robust_floor(x, eps)
    assert f <= c and c - f <= 1
    assert math.floor(x) <= c <= math.ceil(x) and math.floor(x) <= f <= math.ceil(x)
    if abs(x - round(x)) > eps:
        assert c == math.ceil(x) and f == math.floor(x)


def test_snap_log_kinds():
    log = SnapLog()
    robust_ceil(1.0 + 1e-12, 1e-3, log)
    robust_ceil(1.0 + 1e-5, 1e-3, log)
    robust_ceil(1.5, 1e-3, log)
    robust_ceil(1.0, 1e-3, log)
    assert [e.kind for e in log.events] == ["roundoff", "snap"]


def test_eps_bounds():
    with pytest.raises(ValueError):
        robust_ceil(0.3, 0.5)
    with pytest.raises(ValueError):
        robust_floor(float("nan"))


# --------------------------------------------------------------------------- spectral reports

def test_identity_and_reeb(engine):
    r = engine.report(identity())
    assert (r.ell_minus, r.ell_plus, r.ceil_plus, r.floor_minus) == (0.0, 0.0, 0, 0)
    r = engine.report(reeb_handle(0.37))
    assert r.ell_minus == pytest.approx(0.37, abs=1e-12) and r.ell_plus == pytest.approx(0.37, abs=1e-12)
    assert (r.ceil_plus, r.floor_minus) == (1, 0)


def test_base_flow_matches_jet(engine):
    r = engine.report(flow_handle("0.7*cos(2*pi*q)"))
    lo, hi = dense_extrema(lambda q: 0.7 * np.cos(2 * np.pi * q))
    tol = 2 * 0.7 * 2 * np.pi / engine.config.spectral.n
    assert abs(r.ell_minus - lo) <= tol and abs(r.ell_plus - hi) <= tol
    assert json.loads(json.dumps(r.to_dict()))["ceil_plus"] == 1


def test_report_is_cached(engine):
    h = translation_handle("0.2*sin(2*pi*q)")
    engine.report(h)
    n = engine.evaluations
    engine.report(h)
    assert engine.evaluations == n


# --------------------------------------------------------------------------- integer-part calculus

def test_duality(engine, suite):
    for phi in suite:
        a, b = engine.report(phi), engine.report(phi.inverse())
        assert a.ceil_plus == -b.floor_minus, phi.describe()


def test_sign_correlation(engine, suite):
    for phi in suite:
        a, b = engine.report(phi), engine.report(phi.inverse())
        x, y = a.ell_plus, -b.ell_minus
        tol = a.tol_spec + b.tol_spec
        assert (abs(x) <= tol and abs(y) <= tol) or np.sign(x) == np.sign(y), (x, y)


def test_triangle_inequalities(engine, suite):
    for phi, psi in zip(suite, suite[1:] + suite[:1]):
        a, b, ab = engine.report(phi), engine.report(psi), engine.report(phi @ psi)
        assert ab.ceil_plus <= a.ceil_plus + b.ceil_plus
        assert ab.floor_minus >= a.floor_minus + b.floor_minus
        assert ab.floor_minus <= a.floor_minus + b.ceil_plus
        assert ab.floor_minus <= a.ceil_plus + b.floor_minus


def test_conjugation_bounds(engine, suite, small_sample):
    for phi in suite[:4]:
        lo, hi = phi.action_bounds()
        f, c = math.floor(lo), math.ceil(hi)
        for alpha in small_sample:
            r = engine.report(phi.conjugate(alpha))
            assert f <= r.floor_minus and r.ceil_plus <= c


def test_interval_property(engine):
    phis = [h for h in periodic_handle_suite(3, 12) if h.equivariant][:3]
    Ls = [flow_handle("0.2*sin(2*pi*(z - 0.1)) + 0.4*cos(2*pi*q)", name="V"), translation_handle("0.9*sin(2*pi*q)"),
          reeb_handle(0.6)]
    for phi, L in zip(phis, Ls):
        row = interval_check(phi, L, engine)
        assert row["agree"], row
    with pytest.raises(ValueError, match="equivariant"):
        interval_check(Ls[0], phis[0], engine)


# --------------------------------------------------------------------------- order oracle

def test_order_reeb_violates(engine, small_sample):
    v = order_test(reeb_handle(1.0), identity(), small_sample, engine)
    assert isinstance(v, Violated)
    assert v.witness_index == 0 and v.witness["atoms"] == [] and v.value == pytest.approx(1.0, abs=1e-12)


def test_order_reflexive(engine, small_sample):
    phi = flow_handle("0.05*sin(2*pi*q)*bump(p, 0, 1)")
    v = order_test(phi, phi, small_sample, engine)
    assert isinstance(v, ConsistentOnSample) and abs(v.margin) <= 1e-12


def test_order_of_nonnegative_generator(engine, small_sample):
    v = order_test(identity(), flow_handle("0.3*bump(p, 0, 3)"), small_sample, engine)
    assert isinstance(v, ConsistentOnSample)
    assert v.sample_size == len(small_sample)


def test_order_rejects_mixed_groups(engine, small_sample):
    with pytest.raises(ValueError, match="different groups"):
        order_test(flow_handle("z*sin(2*pi*q)"), identity(), small_sample, engine)


# --------------------------------------------------------------------------- metrics

def test_metric_of_equal_handles(engine, small_sample):
    phi = translation_handle("0.3*cos(2*pi*q)")
    est = metric_estimate(phi, phi, small_sample, engine)
    assert est.rho_osc == (0, 0) and est.rho_sup == (0, 0)


@pytest.mark.parametrize("k", [1, 2])
def test_metric_of_cap_powers_is_exact(engine, small_sample, k):
    est = metric_estimate(flow_handle(CAP, float(k)), identity(), small_sample, engine)
    assert est.rho_sup == (k, k)


def test_metric_symmetry(engine, small_sample):
    a = translation_handle("0.8*cos(2*pi*q)")
    b = translation_handle("0.05*sin(4*pi*q)") @ reeb_handle(0.7)
    c = flow_handle("0.1*cos(2*pi*(q - 0.3))*bump(p, 0, 2)") @ reeb_handle(-1.2)
    # lifted flows are paired only with gently sloped translations, which keeps every conjugate within reach
    for phi, psi in [(a, b), (b, c)]:
        x = metric_estimate(phi, psi, small_sample, engine)
        y = metric_estimate(psi, phi, small_sample, engine)
        assert x.rho_osc == y.rho_osc and x.rho_sup == y.rho_sup


def test_metric_rejects_non_periodic(engine, small_sample):
    with pytest.raises(ValueError):
        metric_estimate(flow_handle("z*sin(2*pi*q)"), identity(), small_sample, engine)


def test_ordered_metric(engine, small_sample):
    phi, chi, psi = identity(), flow_handle(CAP, 1.0), flow_handle(CAP, 2.0)
    for a, b in [(phi, chi), (chi, psi), (phi, psi)]:
        assert isinstance(order_test(a, b, small_sample, engine), ConsistentOnSample)
    near = metric_estimate(phi, chi, small_sample, engine).rho_sup[0]
    far = metric_estimate(phi, psi, small_sample, engine).rho_sup[0]
    assert near <= far


# --------------------------------------------------------------------------- homogenization

@pytest.mark.parametrize("c", [0.5, -0.3, 1.25])
def test_nu_of_reeb(engine, c):
    est = nu_estimate(reeb_handle(c), 8, engine, (1, 2, 4, 8))
    assert abs(est.estimate - c) <= 1e-3
    assert all(v == pytest.approx(c, abs=1e-12) for v in est.per_k)
    assert est.bracket[0] <= c <= est.bracket[1]


def test_nu_lower_bound_on_zero_wall(engine):
    est = nu_estimate(flow_handle("0.5*bump(p, 0, 1)"), 8, engine, (1, 2, 4, 8))
    assert est.estimate >= 0.5 - 1e-2


def test_homogeneity(engine):
    for phi in (reeb_handle(0.35), translation_handle("0.3*cos(2*pi*q)")):
        r1, r2, r4 = (engine.report(phi.power(k)).ell_plus for k in (1, 2, 4))
        assert abs(r2 / 2 - r1) <= 1e-9 and abs(r4 / 4 - r2 / 2) <= 1e-9


def test_nu_guards(engine):
    with pytest.raises(ValueError, match="at least 4"):
        nu_estimate(reeb_handle(0.1), 3, engine)
    with pytest.raises(ValueError):
        nu_estimate(flow_handle("z*sin(2*pi*q)"), 4, engine)


class _FakeEngine:
    """Feeds nu_estimate a non-subadditive ceiling sequence."""

    def __init__(self, ceilings):
        from gfspec.invariants import SnapLog as _Log
        self.snap_log = _Log()
        self._c = ceilings

    def reports(self, handles):
        class R:
            pass
        out = []
        for k, _ in enumerate(handles, start=1):
            r = R()
            r.ceil_plus, r.floor_minus, r.ell_plus, r.ell_minus = self._c[k - 1], 0, 0.0, 0.0
            out.append(r)
        return out


def test_subadditivity_alarm():
    with pytest.raises(ConsistencyError, match="subadditivity"):
        nu_estimate(reeb_handle(0.1), 4, _FakeEngine([0, 0, 0, 1]))


# --------------------------------------------------------------------------- displacement and rigidity

def test_displacement_certificate():
    disk = Disk(0.25, 0.75, 0.2)
    cert = displace_disk(disk)
    assert cert.verified and cert.min_image_level > disk.r ** 2
    assert cert.energy == pytest.approx(2 * disk.r * 1.1 / np.cos(2 * np.pi * disk.q_extent()) / np.pi)


def test_undersized_shear_does_not_displace():
    assert not displace_disk(Disk(0.25, 0.75, 0.2), margin=-0.9).verified


def test_rigidity_scenario_a_small(engine):
    out = rigidity_scenarios(RigidityConfig(scenario="A", sample_size=3), engine)
    assert out["passed"], out["rows"]
    assert [r["case"] for r in out["rows"]][:2] == ["alpha = id", "alpha = T[0.3*cos(2*pi*q)]"]
