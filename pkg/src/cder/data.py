"""Labeled, weighted pointclouds and the pooling scheme used for training.

A *cloud collection* is a list of pointclouds living in a common R^D, each
carrying one label.  Training treats the union of all clouds as a single
weighted, labeled pointcloud in which every label carries total weight 1/L
and every cloud of a label is equally representative regardless of its size.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Hashable, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent pointcloud input."""


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    label: int | None = None
    id: Hashable = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        if points.ndim != 2 or points.shape[0] < 1 or points.shape[1] < 1:
            raise DataError(f"cloud {self.id!r}: expected a non-empty (n, D) array, got shape {points.shape}")
        if not np.all(np.isfinite(points)):
            raise DataError(f"cloud {self.id!r}: non-finite coordinates")
        object.__setattr__(self, "points", points)
        if self.weights is not None:
            weights = np.asarray(self.weights, dtype=float).ravel()
            if weights.shape[0] != points.shape[0]:
                raise DataError(f"cloud {self.id!r}: {weights.shape[0]} weights for {points.shape[0]} points")
            if not np.all(weights > 0) or not np.all(np.isfinite(weights)):
                raise DataError(f"cloud {self.id!r}: weights must be positive and finite")
            object.__setattr__(self, "weights", weights)

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def evaluation_weights(self) -> np.ndarray:
        """Weights used when integrating a function against this cloud.

        Clouds without weights (typically test clouds) get 1/|X| per point.
        """
        if self.weights is not None:
            return self.weights
        return np.full(len(self), 1.0 / len(self))


@dataclass(frozen=True)
class CloudCollection:
    clouds: tuple[PointCloud, ...]
    labels: tuple = ()

    def __post_init__(self):
        clouds = tuple(self.clouds)
        labels = tuple(self.labels)
        object.__setattr__(self, "clouds", clouds)
        object.__setattr__(self, "labels", labels)
        if not clouds:
            return
        dims = {c.dimension for c in clouds}
        if len(dims) != 1:
            raise DataError(f"clouds have inconsistent dimensions {sorted(dims)}")
        seen = set()
        for c in clouds:
            if c.label is None:
                continue
            if not 0 <= c.label < len(labels):
                raise DataError(f"cloud {c.id!r}: label index {c.label} outside 0..{len(labels) - 1}")
            seen.add(c.label)
        if all(c.label is not None for c in clouds) and len(seen) != len(labels):
            missing = [labels[i] for i in range(len(labels)) if i not in seen]
            raise DataError(f"labels without any cloud: {missing}")

    @classmethod
    def from_labeled(cls, items: Sequence[tuple[Any, np.ndarray]], ids: Sequence | None = None) -> "CloudCollection":
        """Build from ``(external_label, points)`` pairs.

        Labels are mapped to 0..L-1 in order of first appearance.
        """
        names: list = []
        index: dict = {}
        clouds = []
        for k, (name, pts) in enumerate(items):
            if name not in index:
                index[name] = len(names)
                names.append(name)
            cid = ids[k] if ids is not None else k
            clouds.append(PointCloud(pts, label=index[name], id=cid))
        return cls(tuple(clouds), tuple(names))

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    @property
    def dimension(self) -> int:
        return self.clouds[0].dimension

    def __len__(self) -> int:
        return len(self.clouds)

    def label_of(self, cloud: PointCloud):
        return None if cloud.label is None else self.labels[cloud.label]

    def subset(self, indices: Sequence[int]) -> "CloudCollection":
        return CloudCollection(tuple(self.clouds[i] for i in indices), self.labels)

    def cloud_labels(self) -> np.ndarray:
        return np.array([-1 if c.label is None else c.label for c in self.clouds], dtype=int)


@dataclass(frozen=True)
class PooledPoints:
    coords: np.ndarray
    weights: np.ndarray
    labels: np.ndarray
    origin: np.ndarray
    n_labels: int
    label_names: tuple = field(default=())

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dimension(self) -> int:
        return self.coords.shape[1]

    def label_weights(self, mask: np.ndarray | None = None) -> np.ndarray:
        w = self.weights if mask is None else self.weights[mask]
        lab = self.labels if mask is None else self.labels[mask]
        return np.bincount(lab, weights=w, minlength=self.n_labels)


def assign_weights(collection: CloudCollection, overwrite: bool = False) -> CloudCollection:
    """Give every point the weight 1/(L * N_i * |X_i|).

    ``N_i`` is the number of clouds sharing the label of cloud ``X_i``.  With
    ``overwrite=False`` clouds that already carry weights keep their relative
    per-point emphasis but are rescaled so the cloud totals 1/(L * N_i); each
    label therefore still totals 1/L.
    """
    if len(collection) == 0:
        raise DataError("no clouds")
    if any(c.label is None for c in collection.clouds):
        raise DataError("cannot weight unlabeled clouds")
    L = collection.n_labels
    per_label = np.bincount(collection.cloud_labels(), minlength=L)
    clouds = []
    for c in collection.clouds:
        cloud_total = 1.0 / (L * per_label[c.label])
        if c.weights is None or overwrite:
            w = np.full(len(c), cloud_total / len(c))
        else:
            w = c.weights * (cloud_total / c.weights.sum())
        clouds.append(replace(c, weights=w))
    return CloudCollection(tuple(clouds), collection.labels)


def pool(collection: CloudCollection) -> PooledPoints:
    """Concatenate all clouds, in cloud order then point order."""
    if len(collection) == 0:
        raise DataError("no clouds")
    if any(c.weights is None for c in collection.clouds):
        raise DataError("pool requires weighted clouds; call assign_weights first")
    if any(c.label is None for c in collection.clouds):
        raise DataError("pool requires labeled clouds")
    coords = np.concatenate([c.points for c in collection.clouds])
    weights = np.concatenate([c.weights for c in collection.clouds])
    labels = np.concatenate([np.full(len(c), c.label, dtype=np.intp) for c in collection.clouds])
    origin = np.concatenate([np.full(len(c), k, dtype=np.intp) for k, c in enumerate(collection.clouds)])
    return PooledPoints(coords, weights, labels, origin, collection.n_labels, collection.labels)


# --- file formats -----------------------------------------------------------

def read_csv(path: str | Path) -> CloudCollection:
    """Read ``cloud_id,label,x0,...,x{D-1}[,weight]`` rows.

    An empty label field marks an unlabeled cloud.  Errors name the offending
    line number.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 3 or header[0] != "cloud_id" or header[1] != "label":
            raise DataError(f"{path}:1: header must start with cloud_id,label,x0")
        has_weight = header[-1] == "weight"
        coord_cols = header[2:-1] if has_weight else header[2:]
        if coord_cols != [f"x{k}" for k in range(len(coord_cols))] or not coord_cols:
            raise DataError(f"{path}:1: coordinate columns must be x0..x{{D-1}}")
        D = len(coord_cols)
        width = 2 + D + has_weight

        order: list = []
        rows: dict = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not r.strip() for r in row):
                continue
            if len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} fields (D={D}), got {len(row)}")
            cid, label = row[0].strip(), row[1].strip()
            try:
                values = [float(v) for v in row[2:]]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value") from None
            if not np.all(np.isfinite(values)):
                raise DataError(f"{path}:{lineno}: non-finite value")
            if cid not in rows:
                order.append(cid)
                rows[cid] = (label, [], [])
            elif rows[cid][0] != label:
                raise DataError(f"{path}:{lineno}: cloud {cid!r} has conflicting labels")
            rows[cid][1].append(values[:D])
            if has_weight:
                if values[D] <= 0:
                    raise DataError(f"{path}:{lineno}: weight must be positive")
                rows[cid][2].append(values[D])
    if not order:
        raise DataError(f"{path}: no data rows")
    return _assemble(order, rows)


def _assemble(order, rows) -> CloudCollection:
    names: list = []
    index: dict = {}
    for cid in order:
        label = rows[cid][0]
        if label != "" and label is not None and label not in index:
            index[label] = len(names)
            names.append(label)
    clouds = []
    for cid in order:
        label, pts, ws = rows[cid]
        clouds.append(PointCloud(
            np.array(pts, dtype=float),
            label=index.get(label) if label not in ("", None) else None,
            id=cid,
            weights=np.array(ws) if ws else None,
        ))
    return CloudCollection(tuple(clouds), tuple(names))


def write_csv(collection: CloudCollection, path: str | Path, weights: bool = False) -> None:
    D = collection.dimension
    header = ["cloud_id", "label"] + [f"x{k}" for k in range(D)] + (["weight"] if weights else [])
    with Path(path).open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for c in collection.clouds:
            name = "" if c.label is None else collection.labels[c.label]
            w = c.evaluation_weights()
            for j, p in enumerate(c.points):
                row = [c.id, name] + [repr(float(v)) for v in p]
                if weights:
                    row.append(repr(float(w[j])))
                out.writerow(row)


def read_json(path: str | Path) -> CloudCollection:
    """Read ``{"labels": [...], "clouds": [{"id", "label", "points", "weights"?}]}``."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict) or "clouds" not in doc:
        raise DataError(f"{path}: expected an object with a 'clouds' list")
    labels = list(doc.get("labels", []))
    index = {name: k for k, name in enumerate(labels)}
    clouds = []
    D = None
    for k, entry in enumerate(doc["clouds"]):
        pts = np.asarray(entry.get("points", []), dtype=float)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise DataError(f"{path}: cloud #{k} has no points or ragged points")
        if D is None:
            D = pts.shape[1]
        elif pts.shape[1] != D:
            raise DataError(f"{path}: cloud #{k} has dimension {pts.shape[1]}, expected {D}")
        name = entry.get("label")
        if name is not None and name not in index:
            raise DataError(f"{path}: cloud #{k} label {name!r} not in labels")
        clouds.append(PointCloud(
            pts,
            label=None if name is None else index[name],
            id=entry.get("id", k),
            weights=entry.get("weights"),
        ))
    if not clouds:
        raise DataError(f"{path}: no clouds")
    return CloudCollection(tuple(clouds), tuple(labels))


def write_json(collection: CloudCollection, path: str | Path) -> None:
    doc = {
        "labels": list(collection.labels),
        "clouds": [
            {
                "id": c.id,
                "label": None if c.label is None else collection.labels[c.label],
                "points": c.points.tolist(),
                **({"weights": c.weights.tolist()} if c.weights is not None else {}),
            }
            for c in collection.clouds
        ],
    }
    Path(path).write_text(json.dumps(doc))


def read_collection(path: str | Path) -> CloudCollection:
    path = Path(path)
    if path.suffix.lower() == ".json":
        return read_json(path)
    return read_csv(path)
