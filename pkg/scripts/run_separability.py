"""Train the Cov-BiRe-LogEig net and a mean-vector head on zero-mean synthetic data.

The classes differ only in covariance, so the SPD net should separate them
and the mean head should stay near chance.

    python scripts/run_separability.py --epochs 50 --seed 0
"""
import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from mean_baseline import mean_head_accuracy, train_mean_head  # noqa: E402
from spdpool import network as N  # noqa: E402
from spdpool.synthetic import SyntheticSpec, generate_synthetic  # noqa: E402
from spdpool.training import TrainConfig, train  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="model1", choices=sorted(N.PRESETS))
    ap.add_argument("--classes", type=int, default=3)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--frames", type=int, default=64)
    ap.add_argument("--samples", type=int, default=100)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--lr", type=float, default=1e-2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = SyntheticSpec(classes=args.classes, dim=args.dim, samples_per_class=args.samples,
                         frames=args.frames, seed=args.seed)
    train_data, val_data = generate_synthetic(data)
    spec = N.build_preset(args.preset, args.dim, args.classes, seed=args.seed)
    print(spec)

    t0 = time.perf_counter()
    _, history = train(spec, TrainConfig(learning_rate=args.lr, epochs=args.epochs), train_data, val_data)
    print(f"{'epoch':>5}  {'train_loss':>10}  {'val_acc':>8}")
    for rec in history:
        print(f"{rec.epoch:5d}  {rec.train_loss:10.6f}  {rec.val_accuracy:8.6f}")
    print(f"SPD net: final val accuracy {history[-1].val_accuracy:.6f} ({time.perf_counter() - t0:.1f} s)")

    W, b = train_mean_head(train_data, args.classes, lr=args.lr, epochs=args.epochs, seed=args.seed)
    print(f"mean head: val accuracy {mean_head_accuracy(W, b, val_data):.6f} (chance {1 / args.classes:.6f})")


if __name__ == "__main__":
    main()
