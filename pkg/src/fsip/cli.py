"""Command-line entry point: ``fsip {sweep,dataset,train,eval,pilotbook}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .grid import get_mcs
from .config import load_toml, run_config, train_config
from .harness import ConfigError, evaluate_point, generate_dataset, run_bler_sweep, write_csv
from .neural import CheckpointError, TrainingDiverged, load_checkpoint, save_checkpoint, train
from .pilots import build_pilot_book
from .receiver import ReceiverError

log = logging.getLogger("fsip")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _load_receiver(path: str, cfg):
    if not path:
        raise ConfigError("no checkpoint given (run.checkpoint)")
    try:
        rx, header = load_checkpoint(path)
    except FileNotFoundError as e:
        raise ConfigError(f"checkpoint not found: {path}") from e
    except CheckpointError as e:
        raise ConfigError(f"{path}: {e}") from e
    tc = rx.config
    if (tc.S, tc.T, tc.Nr) != (cfg.S, cfg.T, cfg.Nr):
        raise ConfigError(f"checkpoint grid {(tc.S, tc.T, tc.Nr)} does not match "
                          f"config {(cfg.S, cfg.T, cfg.Nr)}")
    for m in cfg.mcs:
        if get_mcs(m).M > tc.m_max:
            raise ConfigError(f"MCS {m} exceeds the checkpoint's M_max={tc.m_max}")
    return rx


def cmd_sweep(args, doc) -> None:
    cfg = run_config(doc, args.seed)
    rx = _load_receiver(cfg.checkpoint, cfg) if cfg.scheme == "sip-neural" else None
    run_bler_sweep(cfg, args.out, rx, progress=lambda r: log.info(
        "%s snr=%g bler=%.4f", r.scheme, r.snr_db, r.bler))


def cmd_dataset(args, doc) -> None:
    cfg = run_config(doc, args.seed)
    n = args.n if args.n is not None else int(doc.get("dataset", {}).get("n_samples", 0))
    ds = generate_dataset(cfg, n, args.out)
    log.info("wrote %d samples to %s", len(ds), args.out)


def cmd_train(args, doc) -> None:
    cfg = train_config(doc, args.seed)
    if args.steps is not None:
        cfg.steps = args.steps
    out = Path(args.out)
    log_path = out.with_suffix(".jsonl")
    with open(log_path, "w") as f:
        def on_log(rec):
            f.write(json.dumps(rec) + "\n")
            f.flush()
            log.info("step %d loss %.4f", rec["step"], rec["loss"])
        rx, _ = train(cfg, on_log=on_log)
    save_checkpoint(rx, out)


def cmd_eval(args, doc) -> None:
    """Evaluate every checkpoint in ``[[eval.models]]`` into one CSV."""
    cfg = run_config(doc, args.seed)
    models = doc.get("eval", {}).get("models", [])
    if not models:
        models = [{"label": cfg.label or "sip-neural", "checkpoint": cfg.checkpoint}]
    cfg.scheme = "sip-neural"
    results = []
    diag_path = Path(args.out).with_suffix(".jsonl")
    with open(diag_path, "w") as f:
        for entry in models:
            rx = _load_receiver(entry.get("checkpoint", ""), cfg)
            for L in cfg.layers:
                for m in cfg.mcs:
                    for i, snr in enumerate(cfg.snr_db):
                        r = evaluate_point(cfg, L, m, snr, i, rx, entry.get("label", "sip-neural"))
                        results.append(r)
                        f.write(json.dumps({"scheme": r.scheme, "L": L, "mcs": m, "snr_db": snr,
                                            "bler": r.bler, "ce_mse": r.ce_mse}) + "\n")
                        log.info("%s L=%d m=%d snr=%g bler=%.4f", r.scheme, L, m, snr, r.bler)
    write_csv(results, args.out)


def cmd_pilotbook(args, doc) -> None:
    cfg = run_config(doc, args.seed)
    seed = cfg.pilot_seed if args.seed is None else args.seed
    books = {str(L): json.loads(build_pilot_book(cfg.dims(L), seed).to_json()) for L in cfg.layers}
    Path(args.out).write_text(json.dumps(books if len(books) > 1 else next(iter(books.values())),
                                         indent=1))


COMMANDS = {"sweep": cmd_sweep, "dataset": cmd_dataset, "train": cmd_train,
            "eval": cmd_eval, "pilotbook": cmd_pilotbook}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fsip", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="TOML configuration file")
        s.add_argument("--seed", type=int, default=None, help="override the configured seed")
        s.add_argument("--out", required=True, help="output path")
        if name == "dataset":
            s.add_argument("-n", type=int, default=None, help="number of samples")
        if name == "train":
            s.add_argument("--steps", type=int, default=None, help="override training steps")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        doc = load_toml(args.config)
        COMMANDS[args.command](args, doc)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, FloatingPointError, ReceiverError, ArithmeticError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
