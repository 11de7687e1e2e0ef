#!/usr/bin/env python3
"""Generate a synthetic corpus on disk in the canonical dataset layout.

Two families: 'l' (blobs on an L-shaped route, one viewer) and 'archetype'
(random blobs, left-to-right vs top-to-bottom scanners with held-out
personalization viewers).
"""

import argparse
from pathlib import Path

from gazeflow.core import save_dataset
from gazeflow.synthetic import make_archetype_corpus, make_l_corpus


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out", type=Path, help="output dataset directory")
    parser.add_argument("--family", choices=["l", "archetype"], default="l")
    parser.add_argument("--train-images", type=int, default=20)
    parser.add_argument("--test-images", type=int, default=5)
    parser.add_argument("--path-length", type=int, default=8)
    parser.add_argument("--image-size", type=int, default=96)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if args.family == "l":
        ds, display = make_l_corpus(args.train_images, args.test_images, args.path_length,
                                    args.seed, args.image_size)
    else:
        ds, display = make_archetype_corpus(args.train_images, args.test_images,
                                            path_length=args.path_length, seed=args.seed,
                                            image_size=args.image_size)
    save_dataset(ds, args.out)
    print(f"{len(ds.stimuli)} stimuli, {len(ds.scanpaths)} scanpaths -> {args.out}")
    print(f"display: {display.width}x{display.height}, inhibition {display.inhibition_diameter_px:.1f} px")


if __name__ == "__main__":
    main()
