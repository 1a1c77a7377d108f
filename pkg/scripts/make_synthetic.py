"""Write a synthetic manifest, feature store and random splits for desk runs.

    python scripts/make_synthetic.py --out runs/synth --rows 120
"""

import argparse
from dataclasses import replace
from pathlib import Path

from vqa_augment.dataset import random_splits, save_manifest, save_splits
from vqa_augment.synthetic import synth_rows, synth_store


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True)
    ap.add_argument("--rows", type=int, default=120)
    ap.add_argument("--test-fraction", type=float, default=0.25)
    ap.add_argument("--frames", type=int, default=8)
    ap.add_argument("--dims", type=int, nargs=2, default=(8, 8))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = synth_rows(args.rows, seed=args.seed)
    n_test = int(round(args.test_fraction * len(rows)))
    # the manifest carries one fixed split; splits.json adds three random ones for `matrix`
    rows = rows[: len(rows) - n_test] + [replace(r, split="test") for r in rows[len(rows) - n_test:]]
    save_manifest(rows, out / "manifest.jsonl")
    save_splits(random_splits(rows, 3, args.test_fraction, args.seed), out / "splits.json")
    synth_store(rows, n_frames=args.frames, dims=tuple(args.dims), seed=args.seed, root=out / "features")
    print(f"{len(rows)} rows ({n_test} test), features {args.dims[0]}+{args.dims[1]} x {args.frames} frames -> {out}")


if __name__ == "__main__":
    main()
