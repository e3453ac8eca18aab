"""Config-driven batch runner.

    python3 -m gfspec <kind> --config run.yaml --out results/ [--seed N] [--threads N]

Each run writes report.json (sorted keys, schema_version, full resolved
config, tolerances), CSV tables where the scenario produces rows, and
run.log. Exit codes: 0 all assertions passed, 1 an assertion failed (the
report is still written), 2 configuration or pipeline error (a report with
status "error" is written when the output directory is usable).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import traceback
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .dynamics import parse_hamiltonian
from .families import FamilyConfig, cerf_diagram, family_for_isotopy, slope_check, validate_family
from .genfun import graphical_gfqi
from .handles import Handle, Pipeline, Reeb, flow_atom, identity, parse_base_function, translation_atom
from .homology import SpectralConfig, convergence_study, spectral_pair
from .invariants import Disk, InvariantConfig, RigidityConfig, SpectralEngine, conjugator_sample, metric_estimate, \
    nu_estimate, order_test, rigidity_scenarios

SCHEMA_VERSION = 1
KINDS = ("spectra", "order", "metric", "nu", "cerf", "rigidity", "convergence")
TIMING_KEYS = {"seconds", "reduction_seconds", "elapsed"}

log = logging.getLogger("gfspec")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------- config


@dataclass
class ScenarioConfig:
    kind: str
    seed: int
    params: dict = field(default_factory=dict)
    n: int = 128
    resolution: int = 64
    threads: int = 1

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed is mandatory and must be an integer")
        if not 16 <= self.n <= 4096:
            raise ConfigError(f"grid n={self.n} outside [16, 4096]")
        if not 4 <= self.resolution <= 256:
            raise ConfigError(f"resolution={self.resolution} outside [4, 256]")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        return self


def load_config(path: Optional[str], kind: str, seed: Optional[int], threads: Optional[int]) -> ScenarioConfig:
    doc: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            doc = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise ConfigError("the config file must hold a mapping")
    doc = dict(doc)
    file_kind = doc.pop("kind", kind)
    if file_kind != kind:
        raise ConfigError(f"config is for {file_kind!r} but the {kind!r} subcommand was used")
    if seed is not None:
        doc["seed"] = seed
    if threads is not None:
        doc["threads"] = threads
    if "seed" not in doc:
        raise ConfigError("a seed is mandatory (config key 'seed' or --seed)")
    known = {f.name for f in fields(ScenarioConfig)} - {"kind", "params"}
    top = {k: doc.pop(k) for k in list(doc) if k in known}
    params = doc.pop("params", {})
    params.update(doc)
    return ScenarioConfig(kind=kind, params=params, **top).validate()


# --------------------------------------------------------------------------- handle specs


def build_handle(spec: Any, name: str = "") -> Handle:
    """Handle from a config spec.

    A spec is a list of atoms (the last acts first), each one of
    {flow: expr, duration: t, p_support: r}, {translation: expr}, {reeb: c};
    or a mapping {word: [...], power: k}.
    """
    if spec is None or spec == "id":
        return identity()
    power = 1
    if isinstance(spec, dict):
        if "word" not in spec:
            spec = [spec]
        else:
            power = int(spec.get("power", 1))
            spec = spec["word"]
    if not isinstance(spec, list):
        raise ConfigError(f"cannot read handle spec {spec!r}")
    atoms = []
    for item in spec:
        if not isinstance(item, dict) or len({"flow", "translation", "reeb"} & set(item)) != 1:
            raise ConfigError(f"atom spec {item!r} must have exactly one of flow / translation / reeb")
        if "flow" in item:
            atoms.append(flow_atom(str(item["flow"]), float(item.get("duration", 1.0)), item.get("p_support")))
        elif "translation" in item:
            atoms.append(translation_atom(str(item["translation"])))
        else:
            atoms.append(Reeb(float(item["reeb"])))
    h = Handle(tuple(atoms), name or "phi").simplified()
    return h.power(power) if power != 1 else h


# --------------------------------------------------------------------------- scenario runners


def _engine(cfg: ScenarioConfig) -> SpectralEngine:
    return SpectralEngine(InvariantConfig(spectral=SpectralConfig(n=cfg.n, resolution=cfg.resolution),
                                          threads=cfg.threads))


def _sample(cfg: ScenarioConfig):
    p = cfg.params
    return conjugator_sample(int(p.get("sample_seed", cfg.seed)), int(p.get("sample_size", 24)),
                             int(p.get("max_length", 3)))


def _jet_oracle(expr: str, n: int):
    """f with (min f, max f) on a fine grid and the lattice tolerance 2 Lip(f) / n."""
    f = parse_base_function(expr)
    x = np.linspace(0, 1, 20001, endpoint=False)
    v = f(x)
    lip = float(np.max(np.abs(f.derivative(x))))
    return f, float(v.min()), float(v.max()), 2 * lip / n


def run_spectra(cfg: ScenarioConfig):
    engine = _engine(cfg)
    rows, checks = [], []
    for i, g in enumerate(cfg.params.get("generators", [])):
        if "jet" in g:
            f, lo, hi, tol = _jet_oracle(str(g["jet"]), cfg.n)
            sp = spectral_pair(graphical_gfqi(f), SpectralConfig(n=cfg.n, resolution=cfg.resolution))
            ok = abs(sp.ell_minus - lo) <= tol and abs(sp.ell_plus - hi) <= tol
            rows.append({"index": i, "generator": f"jet[{g['jet']}]", "ell_minus": sp.ell_minus,
                         "ell_plus": sp.ell_plus, "expected_minus": lo, "expected_plus": hi, "tol": tol,
                         "passed": bool(ok)})
            checks.append(ok)
        else:
            h = build_handle(g.get("handle"), g.get("name", f"phi{i}"))
            r = engine.report(h)
            row = {"index": i, "generator": h.name, "ell_minus": r.ell_minus, "ell_plus": r.ell_plus,
                   "ceil_plus": r.ceil_plus, "floor_minus": r.floor_minus, "tol_spec": r.tol_spec}
            if "expect" in g:
                lo, hi = (float(x) for x in g["expect"])
                tol = float(g.get("tol", 1e-6))
                ok = abs(r.ell_minus - lo) <= tol and abs(r.ell_plus - hi) <= tol
                row.update({"expected_minus": lo, "expected_plus": hi, "tol": tol, "passed": bool(ok)})
                checks.append(ok)
            rows.append(row)
    return {"rows": rows}, rows, all(checks)


def run_order(cfg: ScenarioConfig):
    p = cfg.params
    phi, psi = build_handle(p.get("phi"), "phi"), build_handle(p.get("psi"), "psi")
    sample = _sample(cfg)
    verdict = order_test(phi, psi, sample, _engine(cfg))
    ok = True
    if "expect" in p:
        ok = verdict.kind == p["expect"]
    return {"verdict": verdict.to_dict(), "sample": sample.describe()}, None, ok


def run_metric(cfg: ScenarioConfig):
    p = cfg.params
    phi, psi = build_handle(p.get("phi"), "phi"), build_handle(p.get("psi"), "psi")
    sample = _sample(cfg)
    est = metric_estimate(phi, psi, sample, _engine(cfg))
    ok = est.rho_osc[0] <= est.rho_osc[1] and est.rho_sup[0] <= est.rho_sup[1]
    if "expect_sup" in p:
        ok = ok and list(est.rho_sup) == [int(x) for x in p["expect_sup"]]
    return {"estimate": est.to_dict(), "sample": sample.describe()}, est.rows, ok


def run_nu(cfg: ScenarioConfig):
    p = cfg.params
    phi = build_handle(p.get("phi"), "phi")
    K = int(p.get("K", 8))
    est = nu_estimate(phi, K, _engine(cfg), p.get("powers"))
    ok = True
    if "expect" in p:
        ok = abs(est.estimate - float(p["expect"])) <= float(p.get("tol", 1e-3))
    rows = [{"k": k, "ell_plus": lp, "ell_minus": lm, "per_k": v, "ceil_plus": c, "floor_minus": f}
            for k, lp, lm, v, c, f in zip(est.powers, est.ell_plus, est.ell_minus, est.per_k, est.ceil_plus,
                                          est.floor_minus)]
    return {"estimate": est.to_dict()}, rows, ok


def run_cerf(cfg: ScenarioConfig):
    p = cfg.params
    H = parse_hamiltonian(str(p["hamiltonian"]))
    fc = FamilyConfig(m=int(p.get("m", 17)), k=int(p.get("k", 32)),
                      spectral=SpectralConfig(n=cfg.n, resolution=min(cfg.resolution, 32)))
    fam = family_for_isotopy(H, fc.k, fc.m, config=fc, check=False, label=str(p["hamiltonian"]))
    rep = validate_family(fam, H, config=fc)
    diag = cerf_diagram(fam, n=int(p.get("cerf_n", 256)))
    _, _, mins, maxs = H.extrema(0.0, 1.0)
    max_h = float(max(np.abs(mins).max(), np.abs(maxs).max()))
    passed, worst, tol = slope_check(diag, max_h, float(p.get("slope_rel_tol", 0.05)))
    sc = {"passed": passed, "worst": worst, "tol": tol}
    rows = [asdict(pt) for pt in diag.points]
    ok = rep.passed and sc["passed"]
    return {"family": rep.to_dict(), "slope_check": sc}, rows, ok


def run_rigidity(cfg: ScenarioConfig):
    p = dict(cfg.params)
    for key in ("disk_far", "disk_near"):
        if key in p:
            p[key] = Disk(**p[key])
    if "powers" in p and p["powers"] is not None:
        p["powers"] = tuple(int(k) for k in p["powers"])
    p.setdefault("sample_seed", cfg.seed)
    allowed = {f.name for f in fields(RigidityConfig)}
    unknown = set(p) - allowed
    if unknown:
        raise ConfigError(f"unknown rigidity parameters {sorted(unknown)}")
    rc = RigidityConfig(**p)
    out = rigidity_scenarios(rc, _engine(cfg))
    rows = [{k: v for k, v in r.items() if k not in ("per_k", "powers", "bracket")} for r in out["rows"]]
    return out, rows, out["passed"]


def run_convergence(cfg: ScenarioConfig):
    p = cfg.params
    if "jet" in p:
        f, lo, hi, _ = _jet_oracle(str(p["jet"]), cfg.n)
        S, ref = graphical_gfqi(f), (lo, hi)
    else:
        S = Pipeline().run(build_handle(p.get("handle"), "phi")).gfqi
        ref = tuple(p["reference"]) if "reference" in p else None
    res = [int(r) for r in p.get("resolutions", [8, 16, 32])]
    out = convergence_study(S, res, ref, p.get("n_per_res"))
    rows = [dict(r, error=e) for r, e in zip(out["rows"], out["errors"])]
    ok = not out["non_monotone"]
    return out, rows, ok


RUNNERS = {"spectra": run_spectra, "order": run_order, "metric": run_metric, "nu": run_nu, "cerf": run_cerf,
           "rigidity": run_rigidity, "convergence": run_convergence}


# --------------------------------------------------------------------------- output


def _clean(obj):
    """JSON-safe copy with timing fields removed and numpy scalars converted."""
    if is_dataclass(obj):
        obj = asdict(obj)
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps(doc) -> str:
    return json.dumps(_clean(doc), sort_keys=True, indent=1) + "\n"


def write_csv(path: Path, rows):
    rows = [_clean(r) for r in rows]
    cols = sorted({k for r in rows for k in r})
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["schema_version"] + cols)
        for r in rows:
            w.writerow([SCHEMA_VERSION] + [json.dumps(r[c]) if isinstance(r.get(c), (list, dict)) else r.get(c, "")
                                           for c in cols])


def run_scenario(cfg: ScenarioConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    ic = _engine(cfg).config
    tolerances = {"eps_int": ic.eps_int, "eps_snapped": ic.eps_snapped, "roundoff": ic.roundoff,
                  "order_tol": ic.order_tol, "identity_tol": ic.pipeline.identity_tol,
                  "spectral_margin": ic.spectral.margin}
    base = {"schema_version": SCHEMA_VERSION, "kind": cfg.kind, "config": asdict(cfg), "tolerances": tolerances}
    try:
        log.info("running %s with seed %d", cfg.kind, cfg.seed)
        np.random.seed(cfg.seed)
        result, rows, ok = RUNNERS[cfg.kind](cfg)
    except (ConfigError, KeyError, TypeError, ValueError, RuntimeError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        log.error(traceback.format_exc())
        doc = dict(base, status="error", error={"type": type(exc).__name__, "message": str(exc),
                                                "scenario": cfg.kind})
        (out / "report.json").write_text(dumps(doc))
        log.removeHandler(handler)
        handler.close()
        return 2
    doc = dict(base, status="passed" if ok else "failed", result=result)
    (out / "report.json").write_text(dumps(doc))
    if rows:
        write_csv(out / f"{cfg.kind}.csv", rows)
    log.info("status %s", doc["status"])
    log.removeHandler(handler)
    handler.close()
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gfspec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.kind, args.seed, args.threads)
    except (ConfigError, OSError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
            doc = {"schema_version": SCHEMA_VERSION, "kind": args.kind, "status": "error",
                   "error": {"type": type(exc).__name__, "message": str(exc), "scenario": args.kind}}
            (out / "report.json").write_text(dumps(doc))
        except OSError:
            pass
        return 2
    return run_scenario(cfg, Path(args.out))
