"""Small stand-in datasets in the UCI HAR on-disk layout.

Useful for smoke runs and tests when the real distribution is not at hand.
Rows are generated from a low-rank latent model (activity effect plus a
weaker subject effect plus noise) pushed through ``tanh`` so values stay in
[-1, 1], and are laid out as per-(subject, activity) recordings like the
original files.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import N_ACTIVITIES, N_FEATURES, HarDataset, official_feature_names


def make_synthetic_har(n_subjects: int = 30, run_length=(20, 40), runs_per_activity: int = 1,
                       test_share: float = 0.3, latent_dim: int = 12, noise: float = 0.5,
                       subject_scale: float = 0.6, seed: int = 0) -> tuple[HarDataset, HarDataset]:
    rng = np.random.default_rng(seed)
    activity = rng.normal(0.0, 1.0, size=(N_ACTIVITIES, latent_dim))
    subject = rng.normal(0.0, subject_scale, size=(n_subjects, latent_dim))
    loadings = rng.normal(0.0, 1.0 / np.sqrt(latent_dim), size=(latent_dim, N_FEATURES))
    subjects = np.arange(1, n_subjects + 1)
    n_test = max(1, int(round(test_share * n_subjects)))
    test_subjects = set(rng.choice(subjects, size=n_test, replace=False).tolist())

    parts = {"train": ([], [], []), "test": ([], [], [])}
    for s in subjects:
        part = parts["test" if s in test_subjects else "train"]
        runs = [a for a in range(1, N_ACTIVITIES + 1) for _ in range(runs_per_activity)]
        for a in rng.permutation(runs):
            n = int(rng.integers(run_length[0], run_length[1] + 1))
            z = activity[a - 1] + subject[s - 1] + rng.normal(0.0, noise, size=(n, latent_dim))
            part[0].append(np.tanh(z @ loadings))
            part[1].append(np.full(n, a))
            part[2].append(np.full(n, s))

    names = official_feature_names()
    out = []
    offset = 0
    for key in ("train", "test"):
        X, y, subj = (np.concatenate(v) for v in parts[key])
        out.append(HarDataset(np.round(X, 7), y, subj, names, np.arange(offset, offset + len(X))))
        offset += len(X)
    return out[0], out[1]


def write_uci_layout(root, train: HarDataset, test: HarDataset) -> Path:
    """Write ``features.txt`` and the train/test text files under ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "features.txt", "w") as fh:
        for j, name in enumerate(train.feature_names, start=1):
            fh.write(f"{j} {name}\n")
    for part, ds in (("train", train), ("test", test)):
        d = root / part
        d.mkdir(exist_ok=True)
        np.savetxt(d / f"X_{part}.txt", ds.features, fmt="%.7e")
        np.savetxt(d / f"y_{part}.txt", ds.activity_labels, fmt="%d")
        np.savetxt(d / f"subject_{part}.txt", ds.subject_ids, fmt="%d")
    return root


def write_synthetic_har(root, **kwargs) -> Path:
    return write_uci_layout(root, *make_synthetic_har(**kwargs))
