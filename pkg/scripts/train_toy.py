#!/usr/bin/env python3
"""Train a desk-scale policy on a dataset directory and report held-out
metrics. Mirrors `gazeflow train` but stays in Python for easy hacking."""

import argparse
import tempfile
from pathlib import Path

import torch

from gazeflow.core import DisplayConfig, load_dataset
from gazeflow.metrics import evaluate
from gazeflow.model import ModelConfig, PolicyModel
from gazeflow.training import EmpiricalEnvProvider, TrainConfig, ablation_config, predict_test_set, train


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("dataset", type=Path)
    parser.add_argument("--out", type=Path, default=None)
    parser.add_argument("--epochs", type=int, default=14)
    parser.add_argument("--warmup-epochs", type=int, default=8)
    parser.add_argument("--lr", type=float, default=1.5e-3)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--path-length", type=int, default=8)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--ablation", choices=["full", "no-rl", "no-sal", "no-dtwd", "no-ior"],
                        default="full")
    parser.add_argument("--individual", action="store_true", help="train with viewer embeddings")
    args = parser.parse_args()

    dataset = load_dataset(args.dataset)
    display = DisplayConfig.from_visual_angle(1024, 768)
    model_cfg = ModelConfig(path_length=args.path_length,
                            mode="individual" if args.individual else "population")
    torch.manual_seed(args.seed)
    model = PolicyModel(model_cfg)

    cfg = ablation_config(args.ablation, TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
        warmup_epochs=args.warmup_epochs, path_length=args.path_length, seed=args.seed,
    ))
    env = EmpiricalEnvProvider(dataset, display, model_cfg.input_w, model_cfg.input_h)
    out = args.out or Path(tempfile.mkdtemp(prefix="gazeflow-toy-"))
    result = train(model, dataset, env, cfg, out)

    report = evaluate(predict_test_set(model, dataset), dataset)
    print(report.to_table())
    print(f"best validation DTW: {result.best_val_dtw:.4f}")
    print(f"artifacts in {out}")


if __name__ == "__main__":
    main()
