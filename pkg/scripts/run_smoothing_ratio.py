"""Same-bin versus all-pair feature distance before and after network smoothing.

    python3 scripts/run_smoothing_ratio.py --seeds 3
"""
import argparse

from placededup.graph import SmoothingConfig, bin_distance_ratio, build_network, train_smoothing
from placededup.pipeline import FeatureConfig, build_text_features
from placededup.places import CATEGORY_CATALOGUE
from placededup.synthetic import SyntheticConfig, generate_synthetic


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--bin-size", type=float, default=0.01)
    ap.add_argument("--epochs", type=int, default=5)
    args = ap.parse_args()

    print("seed\tbefore\tafter")
    for seed in range(args.seeds):
        places, _, _ = generate_synthetic(SyntheticConfig(seed=seed))
        tf = build_text_features(places, FeatureConfig(seed=seed))
        row = {pid: i for i, pid in enumerate(tf.ids)}
        X0 = tf.X[[row[p.id] for p in places]]
        network = build_network(places, args.bin_size, CATEGORY_CATALOGUE)
        _, X = train_smoothing(X0, network, SmoothingConfig(seed=seed, epochs=args.epochs))
        print(f"{seed}\t{bin_distance_ratio(network, X0):.4f}\t{bin_distance_ratio(network, X):.4f}")


if __name__ == "__main__":
    main()
