"""Weighted, labeled cover tree built level by level with friend lists.

Adults are numbered once, in the order they first appear, so the adults of
level ``l`` are always the prefix ``0 .. n_adults(l) - 1`` of the global
numbering.  That prefix order is exactly "by cohort, then by predecessor,
then by proximity to the predecessor's per-label means".

Each level advance runs six stages: advance, orphan, adopt-or-emancipate,
exchange teens, befriend, weigh.  Candidate searches are restricted through
friend lists:

* an orphan of ``a_i`` can only be adopted by a type-1 friend of ``a_i`` or
  by a new successor of one;
* a teen can only move to a successor of a type-2 friend of its previous
  guardian;
* two new adults can only be type-3 friends if their predecessors were.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .data import PooledPoints


class RootPolicy(str, enum.Enum):
    FIRST_POINT = "first_point"
    NEAREST_TO_CENTROID = "nearest_to_centroid"


# theta -> friend type k with T_k(l+1) == r_l + r_{l+1}
SPECIAL_RATIOS = {
    math.sqrt(2.0) - 1.0: 3,
    0.5: 2,
    (math.sqrt(5.0) - 1.0) / 2.0: 1,
}

R0_GUARD = 1e-12
MIN_RADIUS_FRACTION = 1e-12


def friend_radii(theta: float, r_level: float) -> tuple[float, float, float]:
    """Type-1/2/3 friend thresholds at a level of radius ``r_level``."""
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    if r_level <= 0:
        raise ValueError(f"radius must be positive, got {r_level}")
    return (2.0 + theta) * r_level, (2.0 + 2.0 * theta) * r_level, 2.0 * r_level / (1.0 - theta)


def special_friend_type(theta: float) -> int | None:
    for value, kind in SPECIAL_RATIOS.items():
        if abs(theta - value) < 1e-12:
            return kind
    return None


@dataclass(frozen=True)
class CoverTreeConfig:
    theta: float = 0.5
    root_policy: RootPolicy = RootPolicy.NEAREST_TO_CENTROID
    max_level: int | None = None

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
        object.__setattr__(self, "root_policy", RootPolicy(self.root_policy))

    @property
    def fast_elders(self) -> bool:
        return special_friend_type(self.theta) is not None


@dataclass(frozen=True)
class Adult:
    point_index: int
    cohort: int
    predecessor: int


def pairwise_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean distance between two (m, D) arrays."""
    diff = a - b
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def csr_gather(indptr: np.ndarray, indices: np.ndarray, rows: np.ndarray):
    """Expand each requested row of a CSR adjacency.

    Returns ``(owner, values)`` where ``owner[k]`` is the position in ``rows``
    that produced ``values[k]``.
    """
    rows = np.asarray(rows, dtype=np.intp)
    starts = indptr[rows]
    counts = indptr[rows + 1] - starts
    total = int(counts.sum())
    owner = np.repeat(np.arange(rows.shape[0], dtype=np.intp), counts)
    if total == 0:
        return owner, indices[:0]
    offsets = np.arange(total, dtype=np.intp) - np.repeat(np.cumsum(counts) - counts, counts)
    return owner, indices[np.repeat(starts, counts) + offsets]


def group_argmin(owner: np.ndarray, dist: np.ndarray, cand: np.ndarray, n_groups: int):
    """Nearest candidate per group; ties go to the lowest candidate index.

    ``owner`` must be non-decreasing (as produced by :func:`csr_gather`).
    Groups without candidates get index -1 and distance inf.
    """
    best = np.full(n_groups, -1, dtype=np.intp)
    bestd = np.full(n_groups, np.inf)
    if owner.shape[0] == 0:
        return best, bestd
    starts = np.flatnonzero(np.r_[True, owner[1:] != owner[:-1]])
    groups = owner[starts]
    dmin = np.minimum.reduceat(dist, starts)
    at_min = dist == np.repeat(dmin, np.diff(np.r_[starts, owner.shape[0]]))
    masked = np.where(at_min, cand, np.iinfo(np.intp).max)
    best[groups] = np.minimum.reduceat(masked, starts)
    bestd[groups] = dmin
    return best, bestd


def _csr_from_pairs(rows: np.ndarray, cols: np.ndarray, n_rows: int, *extra):
    order = np.lexsort((cols, rows))
    indptr = np.zeros(n_rows + 1, dtype=np.intp)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=indptr[1:])
    return (indptr, cols[order]) + tuple(e[order] for e in extra)


@dataclass
class CoverTreeLevel:
    level: int
    radius: float
    theta: float
    n_adults: int
    guardian: np.ndarray
    distance: np.ndarray
    friends_indptr: np.ndarray
    friends_indices: np.ndarray
    friends_dist: np.ndarray
    elders_indptr: np.ndarray
    elders_indices: np.ndarray
    label_weights: np.ndarray
    label_means: np.ndarray
    child_count: np.ndarray

    @property
    def thresholds(self) -> tuple[float, float, float]:
        return friend_radii(self.theta, self.radius)

    @cached_property
    def _friend_csr(self) -> dict:
        out = {3: (self.friends_indptr, self.friends_indices)}
        for kind in (1, 2):
            keep = self.friends_dist <= self.thresholds[kind - 1]
            rows = np.repeat(np.arange(self.n_adults), np.diff(self.friends_indptr))[keep]
            indptr = np.zeros(self.n_adults + 1, dtype=np.intp)
            np.cumsum(np.bincount(rows, minlength=self.n_adults), out=indptr[1:])
            out[kind] = (indptr, self.friends_indices[keep])
        return out

    def friend_csr(self, kind: int = 3) -> tuple[np.ndarray, np.ndarray]:
        return self._friend_csr[kind]

    def friends(self, adult: int, kind: int = 3) -> np.ndarray:
        indptr, indices = self.friend_csr(kind)
        return indices[indptr[adult]:indptr[adult + 1]]

    def elders(self, adult: int) -> np.ndarray:
        return self.elders_indices[self.elders_indptr[adult]:self.elders_indptr[adult + 1]]

    def children(self, adult: int) -> np.ndarray:
        return np.flatnonzero(self.guardian == adult)

    def sorted_labels(self, adult: int) -> np.ndarray:
        """Labels by descending weight among the adult's children, ties by index."""
        return np.argsort(-self.label_weights[adult], kind="stable")


@dataclass
class CoverTree:
    config: CoverTreeConfig
    pooled: PooledPoints
    r0: float
    adult_point: list = field(default_factory=list)
    cohort: list = field(default_factory=list)
    predecessor: list = field(default_factory=list)
    levels: list = field(default_factory=list)
    degenerate: bool = False

    @property
    def depth(self) -> int:
        return self.levels[-1].level

    def adult(self, k: int) -> Adult:
        return Adult(self.adult_point[k], self.cohort[k], self.predecessor[k])

    def adult_coords(self, n: int | None = None) -> np.ndarray:
        idx = np.asarray(self.adult_point[:n] if n is not None else self.adult_point, dtype=np.intp)
        return self.pooled.coords[idx]

    @property
    def complete(self) -> bool:
        last = self.levels[-1]
        if self.degenerate or not np.any(last.distance > 0):
            return True
        if last.radius < MIN_RADIUS_FRACTION * self.r0:
            return True
        return self.config.max_level is not None and last.level >= self.config.max_level

    def grow(self) -> CoverTreeLevel:
        return advance_level(self)

    def build_full(self) -> "CoverTree":
        while not self.complete:
            advance_level(self)
        return self

    def dump(self) -> list[dict]:
        """Per-level diagnostic records."""
        out = []
        for lvl in self.levels:
            out.append({
                "level": lvl.level,
                "radius": lvl.radius,
                "n_adults": lvl.n_adults,
                "adults": [int(self.adult_point[k]) for k in range(lvl.n_adults)],
                "cohorts": [int(self.cohort[k]) for k in range(lvl.n_adults)],
                "label_weights": lvl.label_weights.tolist(),
            })
        return out


def _weigh(pooled: PooledPoints, guardian: np.ndarray, n_adults: int):
    L, D = pooled.n_labels, pooled.dimension
    key = guardian * L + pooled.labels
    lw = np.bincount(key, weights=pooled.weights, minlength=n_adults * L)
    means = np.empty((n_adults * L, D))
    for d in range(D):
        means[:, d] = np.bincount(key, weights=pooled.weights * pooled.coords[:, d], minlength=n_adults * L)
    with np.errstate(invalid="ignore", divide="ignore"):
        means /= lw[:, None]
    means[lw == 0] = np.nan
    counts = np.bincount(guardian, minlength=n_adults)
    return lw.reshape(n_adults, L), means.reshape(n_adults, L, D), counts


def weigh(tree: CoverTree, level: int, adult: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-label weights and weighted means of one adult's children."""
    lvl = tree.levels[level]
    return lvl.label_weights[adult], lvl.label_means[adult]


def init_root(pooled: PooledPoints, config: CoverTreeConfig | None = None) -> CoverTree:
    config = config or CoverTreeConfig()
    if pooled.n == 0:
        raise ValueError("cannot build a cover tree on an empty point set")
    X = pooled.coords
    if config.root_policy is RootPolicy.FIRST_POINT:
        root = 0
    else:
        centroid = np.average(X, axis=0, weights=pooled.weights)
        root = int(np.argmin(pairwise_distance(X, np.broadcast_to(centroid, X.shape))))
    dist = pairwise_distance(X, np.broadcast_to(X[root], X.shape))
    r0 = float(dist.max()) * (1.0 + R0_GUARD)
    degenerate = r0 == 0.0
    if degenerate:
        r0 = 1.0
    tree = CoverTree(config, pooled, r0, [root], [0], [0], [], degenerate)
    guardian = np.zeros(pooled.n, dtype=np.intp)
    lw, means, counts = _weigh(pooled, guardian, 1)
    one = np.array([0, 1], dtype=np.intp)
    zero = np.zeros(1, dtype=np.intp)
    tree.levels.append(CoverTreeLevel(
        0, r0, config.theta, 1, guardian, dist,
        one, zero.copy(), np.zeros(1), one.copy(), zero.copy(), lw, means, counts,
    ))
    return tree


def find_and_sort_orphans(points: np.ndarray, label_weights: np.ndarray, label_means: np.ndarray,
                          needed: np.ndarray | None = None) -> np.ndarray:
    """Order orphans by round-robin proximity to the guardian's label means.

    Labels are ranked by weight (descending, ties by index); labels with zero
    weight are skipped.  Slot 1 takes the orphan nearest the heaviest label's
    mean, slot 2 the not-yet-taken orphan nearest the second label's mean, and
    so on, cycling through the labels until every orphan is placed.

    If ``needed`` (boolean mask) is given the returned order may stop as soon
    as every needed orphan has been placed.
    """
    m = points.shape[0]
    if m <= 1:
        return np.arange(m, dtype=np.intp)
    ranked = [k for k in np.argsort(-label_weights, kind="stable").tolist() if label_weights[k] > 0]
    if not ranked:
        return np.arange(m, dtype=np.intp)
    diff = points[:, None, :] - label_means[ranked][None, :, :]
    dists = np.sqrt(np.einsum("mld,mld->ml", diff, diff))
    if len(ranked) == 1:
        return np.argsort(dists[:, 0], kind="stable")
    queues = [np.argsort(dists[:, c], kind="stable").tolist() for c in range(len(ranked))]
    ptr = [0] * len(ranked)
    used = bytearray(m)
    need = needed.tolist() if needed is not None else None
    remaining = int(np.count_nonzero(needed)) if needed is not None else m
    order = []
    while remaining > 0:
        for c, queue in enumerate(queues):
            p = ptr[c]
            while used[queue[p]]:
                p += 1
            j = queue[p]
            ptr[c] = p + 1
            used[j] = 1
            order.append(j)
            if need is None or need[j]:
                remaining -= 1
                if remaining == 0:
                    break
    return np.asarray(order, dtype=np.intp)


def advance_level(tree: CoverTree) -> CoverTreeLevel:
    """Build level l+1 from level l (stages: advance .. weigh)."""
    prev: CoverTreeLevel = tree.levels[-1]
    pooled = tree.pooled
    X = pooled.coords
    theta = tree.config.theta
    ell = prev.level
    r, r_next = prev.radius, prev.radius * theta
    n_old = prev.n_adults

    # Advance: every adult survives and is its own elder.
    guardian = prev.guardian.copy()
    distance = prev.distance.copy()

    # Orphan.
    orphans = np.flatnonzero(distance > r_next)

    # Adopt by surviving type-1 friends (vectorized), then emancipate or adopt
    # the rest in adult order, each adult's orphans in round-robin order.
    _adopt_or_emancipate(tree, prev, orphans, guardian, distance, r_next)
    n_new = len(tree.adult_point)

    # Successor lists of level-l adults (self first).
    step_pred = np.arange(n_new, dtype=np.intp)
    step_pred[n_old:] = np.asarray(tree.predecessor[n_old:], dtype=np.intp)
    succ_indptr = np.zeros(n_old + 1, dtype=np.intp)
    np.cumsum(np.bincount(step_pred, minlength=n_old), out=succ_indptr[1:])
    succ_indices = np.argsort(step_pred, kind="stable")

    _exchange_teens(tree, prev, guardian, distance, r_next, succ_indptr, succ_indices)

    f_indptr, f_idx, f_dist = _befriend(tree, prev, step_pred, succ_indptr, succ_indices, r_next)
    e_indptr, e_idx = _compute_elders(tree, prev, n_old, n_new, f_indptr, f_idx, f_dist, r, r_next)

    lw, means, counts = _weigh(pooled, guardian, n_new)
    level = CoverTreeLevel(
        ell + 1, r_next, theta, n_new, guardian, distance,
        f_indptr, f_idx, f_dist, e_indptr, e_idx, lw, means, counts,
    )
    tree.levels.append(level)
    return level


def _adopt_or_emancipate(tree, prev, orphans, guardian, distance, r_next) -> None:
    X = tree.pooled.coords
    ell = prev.level
    if orphans.shape[0] == 0:
        return
    adult_xy = tree.adult_coords()
    f1_indptr, f1_idx = prev.friend_csr(1)
    owner, cand = csr_gather(f1_indptr, f1_idx, prev.guardian[orphans])
    d = pairwise_distance(X[orphans[owner]], adult_xy[cand])
    best, bestd = group_argmin(owner, d, cand, orphans.shape[0])
    covered = bestd <= r_next
    guardian[orphans[covered]] = best[covered]
    distance[orphans[covered]] = bestd[covered]
    if covered.all():
        return

    # Group orphans by their level-l guardian, in adult order.
    g = prev.guardian[orphans]
    order = np.argsort(g, kind="stable")
    g_sorted = g[order]
    bounds = np.flatnonzero(np.r_[True, g_sorted[1:] != g_sorted[:-1], True])
    unc_adults = set(np.unique(g[~covered]).tolist())

    new_by_pred: dict[int, list[int]] = {}
    for s, e in zip(bounds[:-1], bounds[1:]):
        i = int(g_sorted[s])
        if i not in unc_adults:
            continue
        mine = orphans[order[s:e]]
        need = ~covered[order[s:e]]
        seq = find_and_sort_orphans(X[mine], prev.label_weights[i], prev.label_means[i], needed=need)
        seq = seq[need[seq]]
        queue = mine[seq]

        # New adults already emancipated by type-1 friends of a_i.
        fixed = [k for f in prev.friends(i, 1).tolist() for k in new_by_pred.get(f, ())]
        if fixed:
            fixed = np.asarray(fixed, dtype=np.intp)
            fixed_xy = X[[tree.adult_point[k] for k in fixed]]
            dd = np.sqrt(((X[queue][:, None, :] - fixed_xy[None, :, :]) ** 2).sum(-1))
            j = np.argmin(dd, axis=1)
            dmin = dd[np.arange(queue.shape[0]), j]
            hit = dmin <= r_next
            guardian[queue[hit]] = fixed[j[hit]]
            distance[queue[hit]] = dmin[hit]
            queue = queue[~hit]

        # Greedy pass: adopt into a_i's own new adults when possible,
        # otherwise emancipate.
        own: list[int] = []
        pos = 0
        while pos < queue.shape[0]:
            if own:
                rest = queue[pos:]
                own_xy = X[[tree.adult_point[k] for k in own]]
                dd = np.sqrt(((X[rest][:, None, :] - own_xy[None, :, :]) ** 2).sum(-1))
                j = np.argmin(dd, axis=1)
                dmin = dd[np.arange(rest.shape[0]), j]
                miss = np.flatnonzero(dmin > r_next)
                stop = int(miss[0]) if miss.shape[0] else rest.shape[0]
                guardian[rest[:stop]] = np.asarray(own, dtype=np.intp)[j[:stop]]
                distance[rest[:stop]] = dmin[:stop]
                pos += stop
                if pos >= queue.shape[0]:
                    break
            own.append(_emancipate(tree, int(queue[pos]), i, ell + 1, guardian, distance))
            pos += 1
        if own:
            new_by_pred[i] = own


def _emancipate(tree, x, predecessor, cohort, guardian, distance) -> int:
    k = len(tree.adult_point)
    tree.adult_point.append(x)
    tree.cohort.append(cohort)
    tree.predecessor.append(predecessor)
    guardian[x] = k
    distance[x] = 0.0
    return k


def _exchange_teens(tree, prev, guardian, distance, r_next, succ_indptr, succ_indices):
    """Move each teen to its nearest adult; the incumbent keeps ties."""
    X = tree.pooled.coords
    adult_pts = np.asarray(tree.adult_point, dtype=np.intp)
    is_adult = np.zeros(X.shape[0], dtype=bool)
    is_adult[adult_pts] = True
    teens = np.flatnonzero((distance > 0.5 * r_next) & ~is_adult)
    if teens.shape[0] == 0:
        return
    f2_indptr, f2_idx = prev.friend_csr(2)
    o1, q = csr_gather(f2_indptr, f2_idx, prev.guardian[teens])
    o2, h = csr_gather(succ_indptr, succ_indices, q)
    owner = o1[o2]
    d = pairwise_distance(X[teens[owner]], X[adult_pts[h]])
    best, bestd = group_argmin(owner, d, h, teens.shape[0])
    move = bestd < distance[teens]
    guardian[teens[move]] = best[move]
    distance[teens[move]] = bestd[move]


def _befriend(tree, prev, step_pred, succ_indptr, succ_indices, r_next):
    X = tree.pooled.coords
    n_new = step_pred.shape[0]
    adult_pts = np.asarray(tree.adult_point, dtype=np.intp)
    T3 = friend_radii(tree.config.theta, r_next)[2]
    o1, q = csr_gather(prev.friends_indptr, prev.friends_indices, step_pred)
    o2, h = csr_gather(succ_indptr, succ_indices, q)
    k = o1[o2]
    d = pairwise_distance(X[adult_pts[k]], X[adult_pts[h]])
    keep = d <= T3
    return _csr_from_pairs(k[keep], h[keep], n_new, d[keep])


def _compute_elders(tree, prev, n_old, n_new, f_indptr, f_idx, f_dist, r, r_next):
    """Elders of new adults: previous-level adults within r_l + r_{l+1}."""
    X = tree.pooled.coords
    rows = [np.arange(n_old, dtype=np.intp)]
    cols = [np.arange(n_old, dtype=np.intp)]
    if n_new > n_old:
        new = np.arange(n_old, n_new, dtype=np.intp)
        kind = special_friend_type(tree.config.theta)
        if kind is not None:
            threshold = friend_radii(tree.config.theta, r_next)[kind - 1]
            owner, cand = csr_gather(f_indptr, f_idx, new)
            _, dist = csr_gather(f_indptr, f_dist, new)
            keep = (cand < n_old) & (dist <= threshold)
        else:
            adult_pts = np.asarray(tree.adult_point, dtype=np.intp)
            preds = np.asarray(tree.predecessor[n_old:n_new], dtype=np.intp)
            owner, cand = csr_gather(*prev.friend_csr(1), preds)
            dist = pairwise_distance(X[adult_pts[new[owner]]], X[adult_pts[cand]])
            keep = dist <= r + r_next
        rows.append(new[owner[keep]])
        cols.append(cand[keep])
    indptr, idx = _csr_from_pairs(np.concatenate(rows), np.concatenate(cols), n_new)
    return indptr, idx


def build_cover_tree(pooled: PooledPoints, config: CoverTreeConfig | None = None) -> CoverTree:
    """Complete cover tree: grows until every point is its own guardian."""
    return init_root(pooled, config).build_full()
