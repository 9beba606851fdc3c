"""Effect of the mixture size on the toy benchmark.

Trains the mixture-density head with a growing number of Gaussian components
and prints validation loss and image AUROC per setting. More components give
the head more capacity to tile the normal patch distribution, with
diminishing returns once the toy data's few modes are covered.

Run: python3 demos/mixture_size_sweep.py
"""

from patchguard import SplitSpec, TrainConfig, build_bundle, evaluate, make_toy_dataset, train


def main():
    dataset = make_toy_dataset(seed=42)
    split = SplitSpec(seed=0, train_fraction=0.8)
    config = TrainConfig(learning_rate=1e-4, weight_decay=1e-4, batch_size=16,
                         max_epochs=40, patience=30)

    print(f"{'K':>4} {'val loss':>10} {'image AUROC':>12} {'PRO':>8}")
    for k in (1, 2, 5, 10, 20):
        bundle = build_bundle("gmm", dataset.scales, seed=0, num_gaussians=k)
        bundle, history = train(bundle, dataset, split, config)
        _, report = evaluate(bundle, dataset)
        print(f"{k:>4} {min(history.val_loss):>10.4f} "
              f"{report.image_auroc:>12.4f} {report.pro_score:>8.4f}")


if __name__ == "__main__":
    main()
