"""Offline speaker grouping: per-speaker mean embeddings and k-means.

k-means uses k-means++ seeding, Lloyd iterations to an assignment fixpoint,
empty-cluster reseeding to the point farthest from its centroid, and keeps
the best of several seeded restarts by within-cluster sum of squares.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class InfeasibleClustering(ValueError):
    """Raised when there are fewer points than clusters."""


@dataclass
class SpeakerMeans:
    means: dict[str, np.ndarray]
    counts: dict[str, int]


@dataclass
class ClusterModel:
    K: int
    centroids: np.ndarray  # (K, dim)
    assignment: dict[str, int] = field(default_factory=dict)
    inertia: float = 0.0
    sv_checkpoint_hash: str = ""

    def label_of(self, point) -> int:
        d = np.sum((self.centroids - np.asarray(point)) ** 2, axis=1)
        return int(np.argmin(d))

    def to_json(self) -> str:
        return json.dumps({
            "K": self.K,
            "centroids": self.centroids.tolist(),
            "assignment": self.assignment,
            "inertia": self.inertia,
            "sv_checkpoint_hash": self.sv_checkpoint_hash,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text) -> "ClusterModel":
        d = json.loads(text)
        return cls(d["K"], np.asarray(d["centroids"], dtype=np.float64),
                   {k: int(v) for k, v in d["assignment"].items()},
                   d.get("inertia", 0.0), d.get("sv_checkpoint_hash", ""))

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


def speaker_means(embeddings_by_speaker: dict[str, list]) -> SpeakerMeans:
    """Element-wise mean embedding per speaker."""
    means, counts = {}, {}
    for spk, zs in embeddings_by_speaker.items():
        if len(zs) == 0:
            raise ValueError(f"speaker {spk!r} has no embeddings")
        arr = np.asarray(zs, dtype=np.float64)
        means[spk] = arr.mean(axis=0)
        counts[spk] = len(zs)
    return SpeakerMeans(means, counts)


def _wcss(points, centroids, labels):
    return float(np.sum((points - centroids[labels]) ** 2))


def _kmeans_pp_init(points, K, rng):
    n = len(points)
    centroids = [points[int(rng.integers(n))]]
    for _ in range(1, K):
        d2 = np.min(
            [np.sum((points - c) ** 2, axis=1) for c in centroids], axis=0)
        total = d2.sum()
        if total <= 0:
            centroids.append(points[int(rng.integers(n))])
            continue
        idx = int(rng.choice(n, p=d2 / total))
        centroids.append(points[idx])
    return np.asarray(centroids, dtype=np.float64)


def _lloyd_pass(points, centroids, labels, history, max_iter):
    K = len(centroids)
    for _ in range(max_iter):
        d2 = np.sum((points[:, None, :] - centroids[None]) ** 2, axis=2)
        new_labels = np.argmin(d2, axis=1)
        for k in range(K):
            sel = new_labels == k
            if sel.any():
                centroids[k] = points[sel].mean(axis=0)
            else:
                # reseed to the point farthest from its current centroid
                far = int(np.argmax(d2[np.arange(len(points)), new_labels]))
                centroids[k] = points[far]
                new_labels[far] = k
        history.append(_wcss(points, centroids, new_labels))
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
    return centroids, labels


def _best_hartigan_move(points, centroids, labels):
    """Best strictly improving single-point reassignment, or None.

    Uses the exact WCSS delta of moving point i from cluster a to b:
    n_b/(n_b+1)*d(i,b)^2 - n_a/(n_a-1)*d(i,a)^2 (Hartigan's criterion),
    which escapes Lloyd fixpoints that are not single-move optimal.
    """
    K = len(centroids)
    counts = np.bincount(labels, minlength=K)
    d2 = np.sum((points[:, None, :] - centroids[None]) ** 2, axis=2)
    best = None
    for i in range(len(points)):
        a = labels[i]
        if counts[a] <= 1:
            continue
        removal_gain = counts[a] / (counts[a] - 1) * d2[i, a]
        for b in range(K):
            if b == a:
                continue
            delta = counts[b] / (counts[b] + 1) * d2[i, b] - removal_gain
            if delta < -1e-12 and (best is None or delta < best[0]):
                best = (delta, i, b)
    return best


def _lloyd(points, K, rng, max_iter=300):
    centroids = _kmeans_pp_init(points, K, rng)
    labels = None
    history = []
    for _ in range(max_iter):
        centroids, labels = _lloyd_pass(points, centroids, labels,
                                        history, max_iter)
        move = _best_hartigan_move(points, centroids, labels)
        if move is None:
            break
        _, i, b = move
        labels = labels.copy()
        labels[i] = b
        for k in range(K):
            sel = labels == k
            if sel.any():
                centroids[k] = points[sel].mean(axis=0)
        history.append(_wcss(points, centroids, labels))
    return centroids, labels, history


def kmeans(points, K, seed, n_restarts=10, max_iter=300) -> ClusterModel:
    """Best-of-restarts k-means; deterministic given seed."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < K:
        raise InfeasibleClustering(f"{len(points)} points < K={K}")
    best = None
    for r in range(n_restarts):
        rng = np.random.default_rng([seed, r])
        centroids, labels, history = _lloyd(points, K, rng, max_iter)
        inertia = history[-1]
        if best is None or inertia < best[0]:
            best = (inertia, centroids, labels)
    inertia, centroids, labels = best
    model = ClusterModel(K, centroids, inertia=inertia)
    model._labels = labels  # row labels for the caller
    return model


def cluster_speakers(means: SpeakerMeans, K, seed, **kw) -> ClusterModel:
    """k-means over per-speaker mean embeddings."""
    speakers = sorted(means.means)
    pts = np.stack([means.means[s] for s in speakers])
    model = kmeans(pts, K, seed, **kw)
    model.assignment = {s: int(l) for s, l in zip(speakers, model._labels)}
    return model


def partition_agreement(assignment: dict[str, int], truth: dict[str, int]) -> int:
    """Max number of agreeing speakers over all label permutations."""
    from itertools import permutations
    speakers = sorted(assignment)
    ks = sorted(set(assignment.values()) | set(truth.values()))
    best = 0
    for perm in permutations(ks):
        remap = dict(zip(ks, perm))
        best = max(best, sum(remap[assignment[s]] == truth[s] for s in speakers))
    return best
