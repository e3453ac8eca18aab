"""Integer-part calculus over a random periodic handle suite.

    python3 scripts/integer_calculus.py [--seed 0] [--size 20] [--sample 24] [--out calculus.json]

Checks integer duality, the four integer triangle inequalities on
consecutive pairs, and the conjugation bounds floor(min) <= floor(l_-),
ceil(l_+) <= ceil(max) over a conjugator sample. Prints a summary and
writes every comparison with its snap statistics.
"""

import argparse
import json
import math
import sys

from gfspec.invariants import SpectralEngine, conjugator_sample, periodic_handle_suite


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--size", type=int, default=20)
    ap.add_argument("--sample", type=int, default=24)
    ap.add_argument("--out", default="calculus.json")
    args = ap.parse_args(argv)
    engine = SpectralEngine()
    suite = periodic_handle_suite(args.seed, args.size)
    sample = conjugator_sample(args.seed, args.sample)
    rows = []
    reps = {h.name: engine.report(h) for h in suite}
    for h in suite:
        inv = engine.report(h.inverse())
        rows.append({"check": "duality", "phi": h.name, "lhs": reps[h.name].ceil_plus, "rhs": -inv.floor_minus,
                     "ok": reps[h.name].ceil_plus == -inv.floor_minus})
    for phi, psi in zip(suite, suite[1:] + suite[:1]):
        a, b, ab = reps[phi.name], reps[psi.name], engine.report(phi @ psi)
        for name, lhs, rhs, ok in (
                ("ceil+ subadditive", ab.ceil_plus, a.ceil_plus + b.ceil_plus, ab.ceil_plus <= a.ceil_plus + b.ceil_plus),
                ("floor- superadditive", ab.floor_minus, a.floor_minus + b.floor_minus,
                 ab.floor_minus >= a.floor_minus + b.floor_minus),
                ("floor- mixed (phi-, psi+)", ab.floor_minus, a.floor_minus + b.ceil_plus,
                 ab.floor_minus <= a.floor_minus + b.ceil_plus),
                ("floor- mixed (phi+, psi-)", ab.floor_minus, a.ceil_plus + b.floor_minus,
                 ab.floor_minus <= a.ceil_plus + b.floor_minus)):
            rows.append({"check": name, "phi": phi.name, "psi": psi.name, "lhs": lhs, "rhs": rhs, "ok": ok})
    for h in suite:
        lo, hi = h.action_bounds()
        for i, alpha in enumerate(sample):
            r = engine.report(h.conjugate(alpha))
            rows.append({"check": "conjugation", "phi": h.name, "alpha": i, "floor_minus": r.floor_minus,
                         "ceil_plus": r.ceil_plus, "bounds": [math.floor(lo), math.ceil(hi)],
                         "ok": math.floor(lo) <= r.floor_minus and r.ceil_plus <= math.ceil(hi)})
    failures = [r for r in rows if not r["ok"]]
    snaps = engine.snap_log.count("snap")
    doc = {"seed": args.seed, "size": args.size, "sample": args.sample, "comparisons": len(rows),
           "failures": failures, "snaps": snaps, "roundoff": engine.snap_log.count("roundoff"),
           "snap_events": engine.snap_log.to_list(), "rows": rows}
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    print(f"{len(rows)} comparisons, {len(failures)} failures, {snaps} snaps "
          f"({engine.snap_log.count('roundoff')} roundoff events), written to {args.out}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
