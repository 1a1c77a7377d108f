"""Memorise the 20-row synthetic fixture and print the learning curve.

    python scripts/overfit.py [--epochs 200] [--metrics runs/overfit.jsonl]
"""

import argparse
from dataclasses import replace

from vqa_augment.synthetic import OverfitFixture
from vqa_augment.training import train


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0, help="training seed (data seed is fixed by the fixture)")
    ap.add_argument("--metrics")
    args = ap.parse_args()

    fx = OverfitFixture()
    rows, store, table = fx.build()
    tc = replace(fx.train, epochs=args.epochs, seed=args.seed)

    def show(rec):
        if rec["epoch"] % 10 == 0 or rec["train_acc"] == 1.0:
            print(f"epoch {rec['epoch']:4d}  loss {rec['train_loss']:.4f}  train acc {rec['train_acc']:.2f}")

    res = train(rows, store, table, fx.model, tc, metrics_path=args.metrics, on_epoch=show)
    first = next((m["epoch"] for m in res.metrics if m["train_acc"] == 1.0), None)
    print(f"first epoch at 100% train accuracy: {first}")


if __name__ == "__main__":
    main()
