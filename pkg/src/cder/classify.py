"""Per-label norm classifier and the cross-validation harness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.model_selection import StratifiedKFold, StratifiedShuffleSplit

from .covertree import CoverTreeConfig
from .data import CloudCollection, DataError, PointCloud
from .gaussians import CderModel, ModelError, featurize, train


@dataclass(frozen=True)
class Prediction:
    label: int
    per_label_norms: np.ndarray
    low_confidence: bool = False


def label_norms(model: CderModel, features: np.ndarray) -> np.ndarray:
    labels = np.array([c.label for c in model.coordinates], dtype=int)
    sq = np.bincount(labels, weights=features ** 2, minlength=model.n_labels)
    return np.sqrt(sq)


def predict(model: CderModel, cloud: PointCloud) -> Prediction:
    """Label whose coordinates have the largest Euclidean norm on the cloud.

    Ties (including all-zero norms) go to the lowest label index and are
    flagged low-confidence.
    """
    if not model.coordinates:
        raise ModelError("untrained model")
    norms = label_norms(model, featurize(model, cloud))
    best = int(np.argmax(norms))
    tied = int(np.count_nonzero(norms == norms[best])) > 1
    return Prediction(best, norms, tied)


@dataclass
class CvReport:
    folds: int
    per_fold_accuracy: list[float]
    mean_accuracy: float
    confusion: np.ndarray
    n_coordinates: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "folds": self.folds,
            "per_fold_accuracy": list(self.per_fold_accuracy),
            "mean_accuracy": self.mean_accuracy,
            "confusion": self.confusion.tolist(),
            "n_coordinates": list(self.n_coordinates),
        }


def split_indices(collection: CloudCollection, folds: int = 5, test_size: float = 0.2,
                  seed: int = 0, disjoint: bool = False):
    """Stratified (train, test) cloud-index pairs.

    By default ``folds`` independent stratified resamples with the given test
    fraction; ``disjoint=True`` gives classical stratified k-fold.
    """
    y = collection.cloud_labels()
    if (y < 0).any():
        raise DataError("cross-validation needs labeled clouds")
    counts = np.bincount(y, minlength=collection.n_labels)
    if counts.min() < 2:
        raise DataError("cannot stratify: a label has fewer than 2 clouds")
    if disjoint:
        if counts.min() < folds:
            raise DataError(f"cannot stratify: a label has fewer than {folds} clouds")
        splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    else:
        splitter = StratifiedShuffleSplit(n_splits=folds, test_size=test_size, random_state=seed)
    return list(splitter.split(np.zeros(len(y)), y))


def cross_validate(collection: CloudCollection, folds: int = 5, test_size: float = 0.2, seed: int = 0,
                   config: CoverTreeConfig | None = None, parsimonious: bool = True,
                   disjoint: bool = False) -> CvReport:
    """Retrain on each training split and score the held-out clouds."""
    L = collection.n_labels
    confusion = np.zeros((L, L), dtype=int)
    accs, ks = [], []
    for train_idx, test_idx in split_indices(collection, folds, test_size, seed, disjoint):
        model = train(collection.subset(train_idx), config, parsimonious)
        ks.append(len(model))
        correct = 0
        for i in test_idx:
            cloud = collection.clouds[i]
            guess = predict(model, cloud).label if model.coordinates else 0
            confusion[cloud.label, guess] += 1
            correct += guess == cloud.label
        accs.append(correct / len(test_idx))
    return CvReport(folds, accs, float(np.mean(accs)), confusion, ks)
