"""Compare 2, 3 and 4 stacked BiRe blocks on the synthetic task.

    python scripts/run_depth_trend.py --dim 32 --epochs 20
"""
import argparse
import time

from spdpool import network as N
from spdpool.synthetic import SyntheticSpec, generate_synthetic
from spdpool.training import TrainConfig, evaluate, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--classes", type=int, default=3)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--frames", type=int, default=64)
    ap.add_argument("--samples", type=int, default=100)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--lr", type=float, default=1e-2)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args()

    print(f"{'preset':<6}  {'seed':>4}  {'bimap dims':<14}  {'val_acc':>8}  {'loss':>9}  {'secs':>6}")
    for seed in args.seeds:
        data = SyntheticSpec(classes=args.classes, dim=args.dim, samples_per_class=args.samples,
                             frames=args.frames, seed=seed)
        train_data, val_data = generate_synthetic(data)
        for name in ("bire2", "bire3", "bire4"):
            spec = N.build_preset(name, args.dim, args.classes, seed=seed)
            dims = ",".join(str(layer.d_out) for layer in spec.layers if isinstance(layer, N.BiMap))
            t0 = time.perf_counter()
            state, history = train(spec, TrainConfig(learning_rate=args.lr, epochs=args.epochs), train_data)
            acc = evaluate(spec, state.params, val_data)
            print(f"{name:<6}  {seed:4d}  {dims:<14}  {acc:8.6f}  {history[-1].train_loss:9.6f}  "
                  f"{time.perf_counter() - t0:6.1f}")


if __name__ == "__main__":
    main()
