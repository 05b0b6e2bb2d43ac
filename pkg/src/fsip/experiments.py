"""Desk-scale model zoo: train-once checkpoints shared by scripts and the acceptance suite.

Each entry names a TOML config under ``configs/``. ``ensure_checkpoint``
returns a cached checkpoint when its stored training configuration matches
the current config, and trains (and caches) one otherwise.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path

from .config import load_toml, train_config
from .neural import CheckpointError, NeuralReceiver, load_checkpoint, save_checkpoint, train

log = logging.getLogger(__name__)

REPO = Path(__file__).resolve().parents[2]
CONFIG_DIR = REPO / "configs"
ARTIFACT_DIR = REPO / "artifacts"
RETRAIN_ENV = "FSIP_RETRAIN"

DESK_MODELS = {
    "v3": "train_v3.toml",
    "v1": "train_v1.toml",
    "alpha0": "train_alpha0.toml",
    "mixed": "train_mixed_mcs.toml",
    "mcs3": "train_mcs3.toml",
    "mcs14": "train_mcs14.toml",
    "layers": "train_mixed_layers.toml",
}


def model_config(name: str, config_dir: Path = CONFIG_DIR):
    return train_config(load_toml(Path(config_dir) / DESK_MODELS[name]))


def ensure_checkpoint(name: str, *, config_dir: Path = CONFIG_DIR,
                      artifact_dir: Path = ARTIFACT_DIR, force: bool | None = None) -> NeuralReceiver:
    """Load ``artifacts/<name>.ckpt`` or train it from ``configs/``.

    ``force`` defaults to the ``FSIP_RETRAIN`` environment variable (any
    non-empty value other than ``0`` retrains every model).
    """
    cfg = model_config(name, config_dir)
    if force is None:
        force = os.environ.get(RETRAIN_ENV, "") not in ("", "0")
    artifact_dir = Path(artifact_dir)
    path = artifact_dir / f"{name}.ckpt"
    if path.exists() and not force:
        try:
            rx, _ = load_checkpoint(path)
            if rx.config.to_dict() == cfg.to_dict():
                return rx
            log.warning("%s was trained with a different config; retraining", path)
        except CheckpointError as e:
            log.warning("cannot read %s (%s); retraining", path, e)
    artifact_dir.mkdir(parents=True, exist_ok=True)
    log.info("training %s for %d steps", name, cfg.steps)
    with open(path.with_suffix(".jsonl"), "w") as f:
        rx, _ = train(cfg, on_log=lambda r: (f.write(json.dumps(r) + "\n"), f.flush()))
    save_checkpoint(rx, path)
    # evaluate the float32-stored weights, exactly as a later load would
    return load_checkpoint(path)[0]
