"""Seeded generators for the four synthetic cloud collections.

Every generator derives one independent PCG64 stream per cloud from
``SeedSequence(seed).spawn(...)``, so a cloud's points depend only on
``(seed, cloud index)`` and not on generation order.  Generators that need
extra global randomness (deep field) split the root sequence into a
"mixture" child and a "clouds" child, and spawn the per-cloud streams from
the latter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import CloudCollection, PointCloud

BLOB_SIGMA = 0.2
BLOBS_CENTRAL = 100
BLOBS_EXTRA = 2
BLOBS_MEANS = {
    0: [(4.0, 0.0), (5.0, 0.0), (-3.0, 0.0), (-6.0, 0.0)],
    1: [(-4.0, 0.0), (-5.0, 0.0), (3.0, 0.0), (6.0, 0.0)],
}

BLOCKS_BACKGROUND = 30
BLOCKS_EXTRA = 2
BLOCKS_SIDE = 0.1
BLOCKS_CENTERS = {
    0: [(0.25, 0.25), (0.5, 0.5)],
    1: [(0.75, 0.75), (0.5, 0.5)],
}

_R3 = 2.0 * math.sqrt(3.0)
THREE_LABEL_MEANS = {
    0: [(0.0, 0.0), (4.0, 0.0), (-2.0, _R3)],
    1: [(0.0, 0.0), (-2.0, _R3), (-2.0, -_R3)],
    2: [(0.0, 0.0), (-2.0, -_R3), (4.0, 0.0)],
}


def _streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def _collection(clouds: list[tuple[int, np.ndarray]], n_labels: int) -> CloudCollection:
    return CloudCollection(
        tuple(PointCloud(pts, label=lab, id=k) for k, (lab, pts) in enumerate(clouds)),
        tuple(range(n_labels)),
    )


def gen_blobs(seed: int, clouds_per_label: int = 25) -> CloudCollection:
    labels = [lab for lab in (0, 1) for _ in range(clouds_per_label)]
    out = []
    for lab, rng in zip(labels, _streams(seed, len(labels))):
        parts = [rng.standard_normal((BLOBS_CENTRAL, 2))]
        for mu in BLOBS_MEANS[lab]:
            parts.append(np.asarray(mu) + BLOB_SIGMA * rng.standard_normal((BLOBS_EXTRA, 2)))
        out.append((lab, np.concatenate(parts)))
    return _collection(out, 2)


def gen_blocks(seed: int, clouds_per_label: int = 100) -> CloudCollection:
    labels = [lab for lab in (0, 1) for _ in range(clouds_per_label)]
    out = []
    half = BLOCKS_SIDE / 2
    for lab, rng in zip(labels, _streams(seed, len(labels))):
        parts = [rng.uniform(0.0, 1.0, (BLOCKS_BACKGROUND, 2))]
        for c in BLOCKS_CENTERS[lab]:
            parts.append(rng.uniform(np.asarray(c) - half, np.asarray(c) + half, (BLOCKS_EXTRA, 2)))
        out.append((lab, np.concatenate(parts)))
    return _collection(out, 2)


def gen_threelabels(seed: int, clouds_per_label: int = 25, points_per_cloud: int = 90) -> CloudCollection:
    labels = [lab for lab in (0, 1, 2) for _ in range(clouds_per_label)]
    per = points_per_cloud // 3
    out = []
    for lab, rng in zip(labels, _streams(seed, len(labels))):
        parts = [np.asarray(mu) + rng.standard_normal((per, 2)) for mu in THREE_LABEL_MEANS[lab]]
        out.append((lab, np.concatenate(parts)))
    return _collection(out, 3)


@dataclass(frozen=True)
class MixtureComponent:
    label: int
    mean: np.ndarray
    variances: np.ndarray
    angle: float
    amplification: float

    @property
    def covariance(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        rot = np.array([[c, -s], [s, c]])
        return rot @ np.diag(self.variances) @ rot.T

    @property
    def max_sigma(self) -> float:
        return float(np.sqrt(self.variances.max()))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "mean": self.mean.tolist(),
            "variances": self.variances.tolist(),
            "angle": self.angle,
            "amplification": self.amplification,
        }


def deepfield_mixture(rng: np.random.Generator, n_components: int = 50) -> list[MixtureComponent]:
    labels = rng.integers(0, 2, n_components)
    # A label with no component would have no density to sample.
    for lab in (0, 1):
        if not (labels == lab).any():
            labels[lab] = lab
    comps = []
    for lab in labels:
        mean = rng.uniform(0.0, 10.0, 2)
        # uniform on (0, 0.5]
        variances = 0.5 - rng.uniform(0.0, 0.5, 2)
        angle = rng.uniform(0.0, 2 * math.pi)
        amp = rng.uniform(50.0, 5000.0)
        comps.append(MixtureComponent(int(lab), mean, variances, float(angle), float(amp)))
    return comps


def sample_mixture(rng: np.random.Generator, comps: list[MixtureComponent], n: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` points; component chosen with probability proportional to amplification."""
    amps = np.array([c.amplification for c in comps])
    which = rng.choice(len(comps), size=n, p=amps / amps.sum())
    pts = np.empty((n, 2))
    for k in np.unique(which):
        idx = np.flatnonzero(which == k)
        pts[idx] = rng.multivariate_normal(comps[k].mean, comps[k].covariance, size=idx.shape[0])
    return pts, which


def gen_deepfield(seed: int, n_components: int = 50, clouds_per_label: tuple[int, int] = (20, 40),
                  points_per_cloud: tuple[int, int] = (50, 500)) -> tuple[CloudCollection, list[MixtureComponent]]:
    head_seq, cloud_seq = np.random.SeedSequence(seed).spawn(2)
    head = np.random.Generator(np.random.PCG64(head_seq))
    comps = deepfield_mixture(head, n_components)
    counts = [int(head.integers(clouds_per_label[0], clouds_per_label[1] + 1)) for _ in (0, 1)]
    labels = [lab for lab in (0, 1) for _ in range(counts[lab])]
    streams = [np.random.Generator(np.random.PCG64(s)) for s in cloud_seq.spawn(len(labels))]
    out = []
    for lab, rng in zip(labels, streams):
        mine = [c for c in comps if c.label == lab]
        size = int(rng.integers(points_per_cloud[0], points_per_cloud[1] + 1))
        pts, _ = sample_mixture(rng, mine, size)
        out.append((lab, pts))
    return _collection(out, 2), comps


GENERATORS = {
    "blobs": gen_blobs,
    "blocks": gen_blocks,
    "threelabels": gen_threelabels,
    "deepfield": lambda seed: gen_deepfield(seed)[0],
}
