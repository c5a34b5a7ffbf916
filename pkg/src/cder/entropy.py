"""Label entropy and the entropy-guided search for low-entropy regions.

For each candidate adult ``a_i`` at level ``l`` three nested neighbourhoods
are compared:

* alpha: children of ``a_i`` at level l+1
* beta:  children of ``a_i`` at level l
* gamma: children at level l-1 of the elders of ``a_i``

The ordering of their entropies decides whether to build a coordinate on
``a_i``, keep ``a_i`` as a candidate, hand the search to its successors, or
drop it.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .covertree import CoverTree, CoverTreeConfig, init_root
from .data import PooledPoints

log = logging.getLogger(__name__)

# Entropies within this distance of 1 count as maximal.
ENTROPY_ONE_TOL = 1e-12


def entropy(label_weights) -> float:
    """Normalized label entropy, in [0, 1], using log base L."""
    w = np.asarray(label_weights, dtype=float)
    if np.isnan(w).any():
        raise ValueError("NaN label weight")
    if (w < 0).any():
        raise ValueError("label weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("empty region")
    L = w.shape[0]
    if L < 2:
        return 0.0
    p = w / total
    p = p[p > 0]
    s = -float(np.sum(p * np.log(p))) / math.log(L)
    return min(max(s, 0.0), 1.0)


class Decision(enum.Enum):
    BUILD = "build"
    PASS = "pass"
    APPEND_SELF = "append_self"
    APPEND_SUCCESSORS_EXCEPT_SELF = "append_successors_except_self"
    APPEND_ALL_SUCCESSORS = "append_all_successors"


_dead_branch_logged = False


def decide(s_alpha: float, s_beta: float, s_gamma: float, child_counts: tuple[int, int],
           parsimonious: bool = True) -> Decision:
    """Pick the action for one candidate adult.

    Branches are tried in a fixed order and the first match wins:

    1. only itself at l+1               -> pass
    2. only itself at l                 -> pass
    3. S_a <= S_b <= S_g < 1            -> build
    4. S_g <= S_a <= S_b < 1            -> keep self
    5. S_b <= S_a <= S_g < 1            -> successors except self
    6. S_b <= S_g <= S_a < 1            -> successors except self
    7. S_g <= S_a <= S_b < 1            -> pass (shadowed by 4)
    8. S_g <= S_b <= S_a < 1            -> pass
    9. otherwise (some entropy is 1)    -> self and all successors

    In non-parsimonious mode every pass becomes "self and all successors".
    """
    global _dead_branch_logged
    for s in (s_alpha, s_beta, s_gamma):
        if s is None or math.isnan(s):
            raise ValueError("NaN entropy")
    n_alpha, n_beta = child_counts
    skip = Decision.PASS if parsimonious else Decision.APPEND_ALL_SUCCESSORS
    if n_alpha <= 1 or n_beta <= 1:
        return skip
    a, b, g = s_alpha, s_beta, s_gamma
    top = max(a, b, g)
    if top >= 1.0 - ENTROPY_ONE_TOL:
        return Decision.APPEND_ALL_SUCCESSORS
    if a <= b <= g:
        return Decision.BUILD
    if g <= a <= b:
        return Decision.APPEND_SELF
    if b <= a <= g or b <= g <= a:
        return Decision.APPEND_SUCCESSORS_EXCEPT_SELF
    if not _dead_branch_logged:
        log.debug("branch 7 (S_g <= S_a <= S_b -> pass) is shadowed by branch 4")
        _dead_branch_logged = True
    # Only S_g <= S_b <= S_a remains.
    return skip


@dataclass(frozen=True)
class RegionTriple:
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray


def gather_regions(tree: CoverTree, adult: int, level: int) -> RegionTriple:
    """Point indices of the alpha/beta/gamma regions of an adult."""
    lvl = tree.levels[level]
    alpha = tree.levels[level + 1].children(adult) if level + 1 < len(tree.levels) else lvl.children(adult)
    beta = lvl.children(adult)
    if level == 0:
        gamma = beta
    else:
        below = tree.levels[level - 1]
        owners = lvl.elders(adult) if tree.cohort[adult] == level else np.array([adult])
        gamma = np.flatnonzero(np.isin(below.guardian, owners))
    return RegionTriple(alpha, beta, gamma)


def region_label_weights(tree: CoverTree, adult: int, level: int):
    """Per-label weights of alpha, beta, gamma (without materializing sets)."""
    lvl = tree.levels[level]
    w_alpha = tree.levels[level + 1].label_weights[adult]
    w_beta = lvl.label_weights[adult]
    if level == 0:
        w_gamma = w_beta
    elif tree.cohort[adult] == level:
        w_gamma = tree.levels[level - 1].label_weights[lvl.elders(adult)].sum(axis=0)
    else:
        w_gamma = tree.levels[level - 1].label_weights[adult]
    return w_alpha, w_beta, w_gamma


def dominant_labels(label_weights: np.ndarray) -> np.ndarray:
    """Labels holding more than 1/L of the total weight."""
    w = np.asarray(label_weights, dtype=float)
    L = w.shape[0]
    if L == 1:
        return np.array([0]) if w[0] > 0 else np.array([], dtype=int)
    return np.flatnonzero(w > w.sum() / L)


@dataclass(frozen=True)
class BuildEvent:
    adult: int
    level: int
    radius: float
    dominant: tuple[int, ...]
    region: np.ndarray
    label_weights: np.ndarray
    s_alpha: float
    s_beta: float
    s_gamma: float
    delta_entropy: float


@dataclass
class LevelStats:
    level: int
    n_adults: int
    n_candidates: int
    n_built: int


@dataclass
class Selection:
    events: list[BuildEvent]
    tree: CoverTree
    stats: list[LevelStats] = field(default_factory=list)

    @property
    def stop_level(self) -> int:
        """Deepest cover-tree level that had to be built."""
        return self.tree.depth


def delta_entropy(label_weights: np.ndarray, dominant) -> float:
    """Entropy lost on a region when non-dominant labels are erased."""
    w = np.asarray(label_weights, dtype=float)
    kept = np.zeros_like(w)
    kept[list(dominant)] = w[list(dominant)]
    return min(max(entropy(w) - entropy(kept), 0.0), 1.0)


def select_regions(pooled: PooledPoints, config: CoverTreeConfig | None = None,
                   parsimonious: bool = True) -> Selection:
    """Grow the cover tree only as far as the candidate set stays non-empty."""
    tree = init_root(pooled, config)
    events: list[BuildEvent] = []
    stats: list[LevelStats] = []
    candidates = [0]
    level = 0
    while candidates:
        if tree.complete and tree.depth == level:
            # Every adult guards only itself from here on; nothing can be built.
            stats.append(LevelStats(level, tree.levels[level].n_adults, len(candidates), 0))
            break
        if tree.depth < level + 1:
            tree.grow()
        lvl, nxt = tree.levels[level], tree.levels[level + 1]
        # successors (other than self) of each level-l adult
        preds = np.asarray(tree.predecessor[lvl.n_adults:nxt.n_adults], dtype=np.intp)
        new_ids = np.arange(lvl.n_adults, nxt.n_adults)
        nxt_candidates: set[int] = set()
        built = 0
        for i in candidates:
            w_a, w_b, w_g = region_label_weights(tree, i, level)
            counts = (int(nxt.child_count[i]), int(lvl.child_count[i]))
            if counts[0] <= 1 or counts[1] <= 1:
                kind = decide(0.0, 0.0, 0.0, counts, parsimonious)
                s = (math.nan,) * 3
            else:
                s = (entropy(w_a), entropy(w_b), entropy(w_g))
                kind = decide(*s, counts, parsimonious)
            if kind is Decision.BUILD:
                dom = dominant_labels(w_b)
                if dom.shape[0] == 0:
                    continue
                events.append(BuildEvent(
                    adult=i, level=level, radius=lvl.radius, dominant=tuple(int(k) for k in dom),
                    region=lvl.children(i), label_weights=w_b.copy(),
                    s_alpha=s[0], s_beta=s[1], s_gamma=s[2],
                    delta_entropy=delta_entropy(w_b, dom),
                ))
                built += 1
            elif kind is Decision.APPEND_SELF:
                nxt_candidates.add(i)
            elif kind is Decision.APPEND_SUCCESSORS_EXCEPT_SELF:
                nxt_candidates.update(new_ids[preds == i].tolist())
            elif kind is Decision.APPEND_ALL_SUCCESSORS:
                nxt_candidates.add(i)
                nxt_candidates.update(new_ids[preds == i].tolist())
        stats.append(LevelStats(level, lvl.n_adults, len(candidates), built))
        candidates = sorted(nxt_candidates)
        level += 1
    return Selection(events, tree, stats)
