"""Run every scenario config in scripts/configs through the CLI.

    python3 scripts/run_all.py [--out results] [--only spectra,nu] [--repeat]

With --repeat each config is run twice and the JSON artifacts of the two
runs are compared byte for byte.
"""

import argparse
import hashlib
import shutil
import sys
import time
from pathlib import Path

import yaml

from gfspec.cli import main as cli_main

CONFIGS = Path(__file__).resolve().parent / "configs"


def digests(out: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(out.glob("*.json"))}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--only", default="", help="comma-separated config stems")
    ap.add_argument("--repeat", action="store_true", help="run twice and compare JSON bytes")
    args = ap.parse_args(argv)
    only = {s for s in args.only.split(",") if s}
    rows, worst = [], 0
    for cfg in sorted(CONFIGS.glob("*.yaml")):
        if only and cfg.stem not in only:
            continue
        kind = yaml.safe_load(cfg.read_text())["kind"]
        out = Path(args.out) / cfg.stem
        t0 = time.perf_counter()
        code = cli_main([kind, "--config", str(cfg), "--out", str(out)])
        dt = time.perf_counter() - t0
        same = ""
        if args.repeat:
            first = digests(out)
            again = out.with_name(out.name + ".repeat")
            cli_main([kind, "--config", str(cfg), "--out", str(again)])
            same = "identical" if digests(again) == first else "DIFFERENT"
            shutil.rmtree(again)
            worst = max(worst, 0 if same == "identical" else 1)
        worst = max(worst, code)
        rows.append((cfg.stem, kind, code, dt, same))
    print(f"{'config':<14}{'kind':<13}{'exit':>5}{'seconds':>10}  rerun")
    for stem, kind, code, dt, same in rows:
        print(f"{stem:<14}{kind:<13}{code:>5}{dt:>10.1f}  {same}")
    return worst


if __name__ == "__main__":
    sys.exit(main())
