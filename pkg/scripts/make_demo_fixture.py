#!/usr/bin/env python3
"""Regenerate the bundled synthetic demo fixture under fixtures/.

Three tight 2-D clusters (train + test) plus a displaced OOD blob; small
enough to commit, separable enough that the demo report is near-perfect.
"""
from pathlib import Path

import numpy as np

from oodcal.dataset import SplitManifest, make_embedding_set, save_manifest, write_embeddings

OUT = Path(__file__).resolve().parent.parent / "fixtures"

MEANS = np.array([[4.0, 0.0], [0.0, 4.0], [-4.0, -4.0]])
SIGMA = 0.15
N_TRAIN, N_TEST, N_OOD = 60, 30, 40


def main() -> None:
    rng = np.random.default_rng(2024)
    train = np.vstack([m + SIGMA * rng.standard_normal((N_TRAIN, 2)) for m in MEANS])
    test = np.vstack([m + SIGMA * rng.standard_normal((N_TEST, 2)) for m in MEANS])
    ood = rng.uniform(-1.0, 1.0, size=(N_OOD, 2)) + np.array([9.0, -9.0])
    vectors = np.vstack([train, test, ood]).astype(np.float32)
    labels = np.concatenate([
        np.repeat([0, 1, 2], N_TRAIN),
        np.repeat([0, 1, 2], N_TEST),
        np.full(N_OOD, -1),
    ]).astype(np.int32)

    OUT.mkdir(exist_ok=True)
    write_embeddings(OUT / "demo.gemb", make_embedding_set(vectors, labels))
    n_tr, n_te = 3 * N_TRAIN, 3 * N_TEST
    save_manifest(OUT / "demo_split.json", SplitManifest(
        name="synthetic-3class-demo",
        id_train=tuple(range(n_tr)),
        id_test=tuple(range(n_tr, n_tr + n_te)),
        ood_test=tuple(range(n_tr + n_te, n_tr + n_te + N_OOD)),
        class_names={0: "east", 1: "north", 2: "southwest"},
    ))
    print(f"wrote {OUT / 'demo.gemb'} ({(OUT / 'demo.gemb').stat().st_size} bytes) "
          f"and {OUT / 'demo_split.json'}")


if __name__ == "__main__":
    main()
