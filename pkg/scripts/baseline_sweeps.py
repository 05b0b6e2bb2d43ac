"""BLER/throughput sweeps for the classical SIP receiver and the DMRS baselines.

    python3 scripts/baseline_sweeps.py                    # all three sweeps
    python3 scripts/baseline_sweeps.py --slots 200 --mcs 3 7

Writes one CSV per scheme into results/ and prints a compact table.
"""

import argparse
import logging
from pathlib import Path

from fsip.config import load_toml, run_config
from fsip.experiments import CONFIG_DIR, REPO
from fsip.harness import run_bler_sweep

SWEEPS = {"sip-classical": "sweep_classical.toml",
          "dmrs-np1": "sweep_dmrs_np1.toml",
          "dmrs-np4": "sweep_dmrs_np4.toml"}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("sweeps", nargs="*", help=f"subset of {sorted(SWEEPS)}")
    p.add_argument("--slots", type=int, default=None, help="override slots per point")
    p.add_argument("--mcs", type=int, nargs="+", default=None)
    p.add_argument("--out-dir", type=Path, default=REPO / "results")
    args = p.parse_args()
    args.sweeps = args.sweeps or list(SWEEPS)
    bad = set(args.sweeps) - set(SWEEPS)
    if bad:
        p.error(f"unknown sweeps: {sorted(bad)}")
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    args.out_dir.mkdir(parents=True, exist_ok=True)

    for name in args.sweeps:
        cfg = run_config(load_toml(CONFIG_DIR / SWEEPS[name]))
        if args.slots is not None:
            cfg.slots = args.slots
        if args.mcs is not None:
            cfg.mcs = args.mcs
        out = args.out_dir / f"sweep_{name}.csv"
        results = run_bler_sweep(cfg, out, progress=lambda r: logging.info(
            "%s snr=%5.1f bler=%.4f", r.scheme, r.snr_db, r.bler))
        print(f"\n{name} -> {out}")
        print(f"{'SNR':>6} {'BLER':>8} {'+-':>7} {'Mbit/s':>8}")
        for r in results:
            print(f"{r.snr_db:6.1f} {r.bler:8.4f} {r.ci_half:7.4f} {r.throughput_bps / 1e6:8.2f}")


if __name__ == "__main__":
    main()
