#!/usr/bin/env python3
"""
Write a Fruit Tree Navigation leaf table to data/ftn/ftn_d{DEPTH}.csv.
Usage: python scripts/generate_ftn_leaves.py DEPTH [SEED]
"""
import sys
from pathlib import Path

# Ensure project root is on path when run as script
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

import numpy as np

from lcmopg.envs.ftn import ftn_generate_leaves, leaf_table_path, write_leaf_table


def main():
    if len(sys.argv) not in (2, 3):
        print("Usage: python scripts/generate_ftn_leaves.py DEPTH [SEED]", file=sys.stderr)
        sys.exit(1)
    depth = int(sys.argv[1])
    seed = int(sys.argv[2]) if len(sys.argv) == 3 else 0
    leaves = ftn_generate_leaves(depth, np.random.default_rng(seed))
    path = leaf_table_path(depth)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_leaf_table(path, leaves)
    print(f"Wrote {len(leaves)} leaves to {path}")


if __name__ == "__main__":
    main()
