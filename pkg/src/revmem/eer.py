"""Equal error rate over a score threshold sweep, plus cosine trial scoring."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def eer_from_scores(positive, negative) -> float:
    """EER where the false-accept and false-reject curves cross.

    Accept means score >= threshold. FAR/FRR are evaluated at every distinct
    score; the crossing is linearly interpolated between the two bracketing
    thresholds when it falls between evaluation points.
    """
    pos = np.sort(np.asarray(positive, dtype=np.float64))
    neg = np.sort(np.asarray(negative, dtype=np.float64))
    if pos.size == 0 or neg.size == 0:
        raise ConfigError("need at least one positive and one negative trial score")

    hi = max(pos[-1], neg[-1])
    thresholds = np.unique(np.concatenate([pos, neg, [np.nextafter(hi, np.inf)]]))
    far = 1.0 - np.searchsorted(neg, thresholds, side="left") / neg.size
    frr = np.searchsorted(pos, thresholds, side="left") / pos.size

    diff = far - frr
    idx = int(np.argmax(diff <= 0))  # first threshold at/past the crossing
    if diff[idx] == 0:
        return float(far[idx])
    if idx == 0:
        return float((far[0] + frr[0]) / 2)
    lam = diff[idx - 1] / (diff[idx - 1] - diff[idx])
    return float(far[idx - 1] + lam * (far[idx] - far[idx - 1]))


def cosine_scores(embeddings: np.ndarray, labels) -> tuple[np.ndarray, np.ndarray]:
    """All-pairs cosine trials: returns (target scores, nontarget scores)."""
    labels = np.asarray(labels)
    e = embeddings / np.linalg.norm(embeddings, axis=1, keepdims=True)
    sim = e @ e.T
    n = len(labels)
    iu = np.triu_indices(n, k=1)
    same = labels[iu[0]] == labels[iu[1]]
    scores = sim[iu]
    return scores[same], scores[~same]


def read_score_file(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse `label score` lines, label in {target, nontarget}."""
    pos, neg = [], []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2 or parts[0] not in ("target", "nontarget"):
                raise ConfigError(f"{path}:{ln}: expected 'target|nontarget <score>'")
            (pos if parts[0] == "target" else neg).append(float(parts[1]))
    return np.asarray(pos), np.asarray(neg)
