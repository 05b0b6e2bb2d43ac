"""Neural-receiver ablations on the desk-scale checkpoints.

    python3 scripts/run_ablations.py                  # every study
    python3 scripts/run_ablations.py iterations --slots 300

Studies (checkpoints are trained on first use, see train_desk_models.py):
  iterations  V=3 model at V=1..3 against a model trained with V=1
  alpha0      pilot power 0.05 against a model trained without pilots
  mcs         mixed-MCS model against MCS-specific models, per MCS
  classical   classical SIP receiver on the same slots, for reference

Results go to results/ablation_<study>.csv.
"""

import argparse
import dataclasses
import logging
from pathlib import Path

from fsip.config import load_toml, run_config
from fsip.experiments import CONFIG_DIR, REPO, ensure_checkpoint
from fsip.harness import evaluate_point, write_csv

MCS_SNR = {3: [0.0, 2.0, 4.0], 7: [5.0, 10.0, 15.0], 14: [18.0, 22.0, 26.0]}


def sweep(base, rx, label, **over):
    cfg = dataclasses.replace(base, **over)
    out = []
    for m in cfg.mcs:
        for i, snr in enumerate(cfg.snr_db):
            r = evaluate_point(cfg, cfg.layers[0], m, snr, i, rx, label)
            logging.info("%-14s mcs=%2d snr=%5.1f bler=%.4f", label, m, snr, r.bler)
            out.append(r)
    return out


def study_iterations(base):
    v3, v1 = ensure_checkpoint("v3"), ensure_checkpoint("v1")
    res = []
    for V in (1, 2, 3):
        res += sweep(base, v3, f"v3-model-V{V}", V=V, scheme="sip-neural")
    return res + sweep(base, v1, "v1-model-V1", V=1, scheme="sip-neural")


def study_alpha0(base):
    return (sweep(base, ensure_checkpoint("v3"), "alpha0.05", scheme="sip-neural")
            + sweep(base, ensure_checkpoint("alpha0"), "alpha0", alpha=0.0, scheme="sip-neural"))


def study_mcs(base):
    mixed = ensure_checkpoint("mixed")
    specific = {3: ensure_checkpoint("mcs3"), 7: ensure_checkpoint("v3"), 14: ensure_checkpoint("mcs14")}
    res = []
    for m, snrs in MCS_SNR.items():
        res += sweep(base, mixed, "mixed", mcs=[m], snr_db=snrs, scheme="sip-neural")
        res += sweep(base, specific[m], f"specific-mcs{m}", mcs=[m], snr_db=snrs, scheme="sip-neural")
    return res


def study_classical(base):
    return sweep(base, None, "sip-classical", scheme="sip-classical")


STUDIES = {"iterations": study_iterations, "alpha0": study_alpha0,
           "mcs": study_mcs, "classical": study_classical}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("studies", nargs="*", help=f"subset of {sorted(STUDIES)}")
    p.add_argument("--slots", type=int, default=500)
    p.add_argument("--out-dir", type=Path, default=REPO / "results")
    args = p.parse_args()
    args.studies = args.studies or list(STUDIES)
    bad = set(args.studies) - set(STUDIES)
    if bad:
        p.error(f"unknown studies: {sorted(bad)}")
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    base = dataclasses.replace(run_config(load_toml(CONFIG_DIR / "desk.toml")), slots=args.slots)
    for name in args.studies:
        results = STUDIES[name](base)
        out = args.out_dir / f"ablation_{name}.csv"
        write_csv(results, out)
        print(f"\n{name} -> {out}")
        for r in results:
            print(f"  {r.scheme:16s} snr={r.snr_db:5.1f} bler={r.bler:.4f} +-{r.ci_half:.4f}")


if __name__ == "__main__":
    main()
