"""Gaussian distributional coordinates and the trained model.

A coordinate is a unit-mass Gaussian ``g`` scaled by a coefficient ``m``;
integrating it against a weighted cloud gives ``m * sum_j w_j g(x_j)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .covertree import CoverTreeConfig
from .data import CloudCollection, PointCloud, PooledPoints, assign_weights, pool
from .entropy import BuildEvent, Selection, select_regions

MODEL_VERSION = 1
DROP_RELATIVE = 1e-15


class ModelError(ValueError):
    pass


def covariance_floor(radius: float) -> float:
    return max(1e-12, 1e-6 * radius * radius)


def fit_gaussian(points: np.ndarray, weights: np.ndarray, floor: float = 1e-12):
    """Weighted mean and eigenvalue-floored weighted covariance."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    weights = np.asarray(weights, dtype=float)
    if points.shape[0] == 0:
        raise ValueError("cannot fit a Gaussian to an empty set")
    if (weights <= 0).any():
        raise ValueError("weights must be positive")
    total = weights.sum()
    mean = weights @ points / total
    centered = points - mean
    cov = (centered * weights[:, None]).T @ centered / total
    cov = (cov + cov.T) / 2
    evals, evecs = np.linalg.eigh(cov)
    evals = np.maximum(evals, floor)
    return mean, (evecs * evals) @ evecs.T


@dataclass(frozen=True)
class GaussianCoordinate:
    label: int
    mean: np.ndarray
    covariance: np.ndarray
    coefficient: float
    level: int
    radius: float
    delta_entropy: float
    weight: float
    adult: int = -1

    @cached_property
    def _whiten(self):
        evals, evecs = np.linalg.eigh(self.covariance)
        D = self.mean.shape[0]
        log_norm = -0.5 * (D * math.log(2 * math.pi) + float(np.sum(np.log(evals))))
        return evecs / np.sqrt(evals), log_norm

    @property
    def dimension(self) -> int:
        return self.mean.shape[0]

    def log_density(self, x: np.ndarray) -> np.ndarray:
        proj, log_norm = self._whiten
        z = (np.atleast_2d(x) - self.mean) @ proj
        return log_norm - 0.5 * np.einsum("ij,ij->i", z, z)

    def density(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.log_density(x))

    def expected_coefficient(self) -> float:
        return self.weight * (1.0 - self.delta_entropy) * self.radius ** self.dimension

    def axes(self) -> np.ndarray:
        """Ellipse semi-axes as columns: eigenvectors scaled by sqrt(eigenvalues)."""
        evals, evecs = np.linalg.eigh(self.covariance)
        return evecs * np.sqrt(evals)

    def to_dict(self) -> dict:
        return {
            "label": int(self.label),
            "mean": [float(v) for v in self.mean],
            "covariance": [float(v) for v in self.covariance.ravel()],
            "coefficient": float(self.coefficient),
            "level": int(self.level),
            "radius": float(self.radius),
            "delta_entropy": float(self.delta_entropy),
            "weight": float(self.weight),
            "adult": int(self.adult),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianCoordinate":
        mean = np.asarray(d["mean"], dtype=float)
        D = mean.shape[0]
        cov = np.asarray(d["covariance"], dtype=float).reshape(D, D)
        return cls(int(d["label"]), mean, cov, float(d["coefficient"]), int(d["level"]),
                   float(d["radius"]), float(d["delta_entropy"]), float(d["weight"]), int(d.get("adult", -1)))


def build_coordinate(event: BuildEvent, label: int, pooled: PooledPoints) -> GaussianCoordinate:
    if label not in event.dominant:
        raise ValueError(f"label {label} is not dominant in region of adult {event.adult}")
    pts = event.region[pooled.labels[event.region] == label]
    mean, cov = fit_gaussian(pooled.coords[pts], pooled.weights[pts], covariance_floor(event.radius))
    w = float(event.label_weights[label])
    m = w * (1.0 - event.delta_entropy) * event.radius ** pooled.dimension
    return GaussianCoordinate(label, mean, cov, m, event.level, event.radius, event.delta_entropy, w, event.adult)


@dataclass
class CderModel:
    coordinates: list[GaussianCoordinate]
    labels: tuple
    dimension: int
    theta: float = 0.5
    config: dict = field(default_factory=dict)

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return len(self.coordinates)

    def coefficients(self) -> np.ndarray:
        return np.array([c.coefficient for c in self.coordinates])

    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "dimension": self.dimension,
            "theta": self.theta,
            "labels": list(self.labels),
            "config": self.config,
            "coordinates": [c.to_dict() for c in self.coordinates],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_dict(cls, d: dict) -> "CderModel":
        if d.get("version") != MODEL_VERSION:
            raise ModelError(f"unsupported model version {d.get('version')!r}")
        coords = [GaussianCoordinate.from_dict(c) for c in d["coordinates"]]
        return cls(coords, tuple(d["labels"]), int(d["dimension"]), float(d["theta"]), dict(d.get("config", {})))

    @classmethod
    def load(cls, path: str | Path) -> "CderModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def evaluate(coordinate: GaussianCoordinate, cloud: PointCloud) -> float:
    if cloud.dimension != coordinate.dimension:
        raise ValueError(f"cloud dimension {cloud.dimension} != coordinate dimension {coordinate.dimension}")
    w = cloud.evaluation_weights()
    return float(coordinate.coefficient * np.dot(w, coordinate.density(cloud.points)))


def featurize(model: CderModel, cloud: PointCloud) -> np.ndarray:
    if not model.coordinates:
        raise ModelError("untrained model")
    return np.array([evaluate(c, cloud) for c in model.coordinates])


def coordinates_from_selection(selection: Selection) -> list[GaussianCoordinate]:
    pooled = selection.tree.pooled
    coords = [build_coordinate(ev, lab, pooled) for ev in selection.events for lab in ev.dominant]
    coords = [c for c in coords if c.coefficient > 0]
    if coords:
        top = max(c.coefficient for c in coords)
        coords = [c for c in coords if c.coefficient >= DROP_RELATIVE * top]
    return coords


def train(collection: CloudCollection, config: CoverTreeConfig | None = None,
          parsimonious: bool = True, return_selection: bool = False):
    """Weight, pool, select regions and build the coordinate model."""
    config = config or CoverTreeConfig()
    pooled = pool(assign_weights(collection))
    selection = select_regions(pooled, config, parsimonious)
    model = CderModel(
        coordinates_from_selection(selection),
        tuple(collection.labels),
        pooled.dimension,
        config.theta,
        {"root_policy": config.root_policy.value, "parsimonious": parsimonious,
         "max_level": config.max_level},
    )
    if return_selection:
        return model, selection
    return model
