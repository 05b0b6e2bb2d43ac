"""Train (or reuse) every desk-scale checkpoint under artifacts/.

    python3 scripts/train_desk_models.py            # all models
    python3 scripts/train_desk_models.py v3 v1      # a subset
    FSIP_RETRAIN=1 python3 scripts/train_desk_models.py   # ignore the cache
"""

import argparse
import logging
import time

from fsip.experiments import DESK_MODELS, ensure_checkpoint


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("models", nargs="*", help=f"subset of {sorted(DESK_MODELS)}")
    args = p.parse_args()
    args.models = args.models or list(DESK_MODELS)
    bad = set(args.models) - set(DESK_MODELS)
    if bad:
        p.error(f"unknown models: {sorted(bad)}")
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    for name in args.models:
        t0 = time.time()
        ensure_checkpoint(name)
        logging.info("%s ready after %.0f s", name, time.time() - t0)


if __name__ == "__main__":
    main()
