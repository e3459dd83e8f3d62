"""Per-image runtime of the classical and network dehazers across image sizes.

    python scripts/bench_table.py --sizes 100x100,256x256 --repeats 10

The network uses a fresh initialisation unless ``--checkpoint`` is given; runtime does
not depend on the weights.  Set DEHAZE_THREADS to pin the BLAS thread count.
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from dehaze import classical, cli, metrics, net


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="100x100,256x256")
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--checkpoint", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    params = net.load_checkpoint(args.checkpoint) if args.checkpoint else net.NetworkParams.init(args.seed)
    methods = {"classical": lambda img: classical.dehaze_classical(img)[0],
               "net": lambda img: net.dehaze_net(img, params)[0]}
    rng = np.random.default_rng(args.seed)
    print(f"{'size':>10} {'method':<10} {'mean_s':>10} {'std_s':>10}")
    for size in args.sizes.split(","):
        h, w = cli.parse_size(size)
        images = [rng.random((h, w, 3))]
        for name, fn in methods.items():
            res = metrics.bench_time(fn, images, args.repeats)
            print(f"{h:>4}x{w:<5} {name:<10} {res.mean:10.5f} {res.std:10.5f}")


if __name__ == "__main__":
    main()
