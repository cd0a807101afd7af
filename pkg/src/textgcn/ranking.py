"""Top-k recommendation by cosine similarity, ranking metrics, baselines.

Candidates are always the items the user has not interacted with in
training. Ties are broken by ascending item index so rankings are
reproducible; per-user metrics are averaged with exactly rounded
summation (math.fsum), making the report independent of user iteration
order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .corpus import DatasetSplit, InteractionMatrix
from .errors import DataError


@dataclass
class Ranking:
    """Ordered recommendation list for one user."""

    items: np.ndarray
    scores: np.ndarray
    truncated: bool = False   # fewer than k candidates existed
    user: int | None = None


@dataclass
class MetricsReport:
    dataset: str
    model: str
    k: int
    recall: float
    ndcg: float
    hr: float
    n_users: int

    def to_json(self) -> str:
        return json.dumps({
            "dataset": self.dataset, "model": self.model, "k": self.k,
            "recall": self.recall, "ndcg": self.ndcg, "hr": self.hr,
            "users": self.n_users,
        }, sort_keys=True)


def unit_rows(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalized copy plus a mask of zero-norm rows (left as zeros)."""
    matrix = np.asarray(matrix, dtype=np.float32)
    norms = np.linalg.norm(matrix, axis=1)
    zero = norms == 0
    safe = np.where(zero, 1.0, norms).astype(np.float32)
    return matrix / safe[:, None], zero


def _topk_within(scores: np.ndarray, candidates: np.ndarray, k: int) -> np.ndarray:
    """Top-k candidate indices by (score desc, index asc); exact partial selection.

    Matches a full stable sort followed by truncation, without sorting the
    entire axis: everything strictly above the kth-largest score is in,
    and ties at the boundary are filled by ascending item index.
    """
    cscores = scores[candidates]
    n = len(candidates)
    if k < n:
        kth = np.partition(cscores, n - k)[n - k]
        above = cscores > kth
        need = k - int(above.sum())
        eq_pos = np.flatnonzero(cscores == kth)[:need]
        mask = above.copy()
        mask[eq_pos] = True
        candidates = candidates[mask]
        cscores = cscores[mask]
    order = np.lexsort((candidates, -cscores))
    return candidates[order]


def recommend_topk(user_vec: np.ndarray, item_emb: np.ndarray,
                   exclude: set[int] | np.ndarray, k: int,
                   user: int | None = None) -> Ranking:
    """Top-k non-excluded items by cosine similarity to the user vector.

    Zero-norm item rows score 0. Fewer than k candidates returns them all
    with the truncated flag set.
    """
    if k < 1:
        raise DataError("k must be >= 1")
    user_vec = np.asarray(user_vec, dtype=np.float32)
    norm = np.linalg.norm(user_vec)
    if norm == 0:
        raise DataError("zero user vector")
    item_unit, _ = unit_rows(item_emb)
    scores = item_unit @ (user_vec / norm)

    excluded = np.zeros(len(scores), dtype=bool)
    exclude_arr = np.asarray(sorted(exclude) if isinstance(exclude, set) else exclude,
                             dtype=np.int64)
    excluded[exclude_arr] = True
    candidates = np.flatnonzero(~excluded)
    truncated = len(candidates) < k
    top = _topk_within(scores, candidates, k)
    return Ranking(items=top, scores=scores[top], truncated=truncated, user=user)


def recall_at_k(items: np.ndarray, relevant: set[int]) -> float:
    """|top-k intersect relevant| / |relevant|."""
    if not relevant:
        raise DataError("empty relevant set")
    hits = sum(1 for i in items if int(i) in relevant)
    return hits / len(relevant)


def ndcg_at_k(items: np.ndarray, relevant: set[int], k: int) -> float:
    """Binary-relevance NDCG with the ideal DCG truncated at min(|relevant|, k)."""
    if not relevant:
        raise DataError("empty relevant set")
    dcg = sum(1.0 / math.log2(rank + 1)
              for rank, item in enumerate(items, start=1) if int(item) in relevant)
    ideal = sum(1.0 / math.log2(rank + 1)
                for rank in range(1, min(len(relevant), k) + 1))
    return dcg / ideal


def hr_at_k(items: np.ndarray, relevant: set[int]) -> float:
    """1.0 if any relevant item was retrieved, else 0.0."""
    return 1.0 if any(int(i) in relevant for i in items) else 0.0


def _check_exclusion(top: np.ndarray, train_items: np.ndarray) -> None:
    if len(train_items) == 0 or len(top) == 0:
        return
    pos = np.searchsorted(train_items, top)
    pos = np.minimum(pos, len(train_items) - 1)
    if np.any(train_items[pos] == top):
        raise AssertionError("recommended an item from the user's train set")


def _aggregate(split_name: str, model: str, k: int,
               per_user: list[tuple[float, float, float]]) -> MetricsReport:
    if not per_user:
        raise DataError("zero evaluable users")
    n = len(per_user)
    recall = math.fsum(m[0] for m in per_user) / n
    ndcg = math.fsum(m[1] for m in per_user) / n
    hr = math.fsum(m[2] for m in per_user) / n
    return MetricsReport(dataset=split_name, model=model, k=k,
                         recall=recall, ndcg=ndcg, hr=hr, n_users=n)


def _part_matrix(split: DatasetSplit, part: str) -> InteractionMatrix:
    if part not in ("val", "test"):
        raise DataError(f"part must be 'val' or 'test', got {part!r}")
    return split.val if part == "val" else split.test


def evaluate(split: DatasetSplit, user_emb: np.ndarray, item_emb: np.ndarray,
             k: int = 20, part: str = "test", model: str = "textgcn",
             block: int = 512) -> MetricsReport:
    """Rank every evaluable user's candidates and average the three metrics.

    A user is evaluable with >= 1 relevant item in the chosen part and
    >= 1 training interaction. Candidate scores come from the cosine of
    the supplied embeddings; the user's train items are excluded and the
    exclusion is asserted on every ranking.
    """
    target = _part_matrix(split, part)
    train = split.train
    if user_emb.shape[0] != train.n_users or item_emb.shape[0] != train.n_items:
        raise DataError("embedding row counts do not match the split")
    user_unit, _ = unit_rows(user_emb)
    item_unit, _ = unit_rows(item_emb)

    eligible = np.flatnonzero((target.user_degrees > 0) & (train.user_degrees > 0))
    per_user: list[tuple[float, float, float]] = []
    for start in range(0, len(eligible), block):
        batch = eligible[start:start + block]
        scores = user_unit[batch] @ item_unit.T
        for row, u in enumerate(batch):
            train_items = train.items_of(int(u))
            s = scores[row]
            s[train_items] = -np.inf
            candidates = np.flatnonzero(np.isfinite(s))
            top = _topk_within(s, candidates, k)
            _check_exclusion(top, train_items)
            relevant = set(target.items_of(int(u)).tolist())
            per_user.append((recall_at_k(top, relevant),
                             ndcg_at_k(top, relevant, k),
                             hr_at_k(top, relevant)))
    return _aggregate(split.name, model, k, per_user)


def _evaluate_fixed_rankings(split: DatasetSplit, k: int, part: str, model: str,
                             rank_user) -> MetricsReport:
    """Shared driver for baselines: rank_user(u, train_items) -> item array."""
    target = _part_matrix(split, part)
    train = split.train
    eligible = np.flatnonzero((target.user_degrees > 0) & (train.user_degrees > 0))
    per_user: list[tuple[float, float, float]] = []
    for u in eligible:
        train_items = train.items_of(int(u))
        top = rank_user(int(u), train_items)[:k]
        _check_exclusion(top, train_items)
        relevant = set(target.items_of(int(u)).tolist())
        per_user.append((recall_at_k(top, relevant),
                         ndcg_at_k(top, relevant, k),
                         hr_at_k(top, relevant)))
    return _aggregate(split.name, model, k, per_user)


def baseline_random(split: DatasetSplit, k: int = 20, seed: int = 0,
                    part: str = "test") -> MetricsReport:
    """Uniformly random permutation of each user's candidates, seeded per user."""
    n_items = split.train.n_items

    def rank_user(u: int, train_items: np.ndarray) -> np.ndarray:
        mask = np.ones(n_items, dtype=bool)
        mask[train_items] = False
        candidates = np.flatnonzero(mask)
        rng = np.random.default_rng((seed, u))
        return rng.permutation(candidates)

    return _evaluate_fixed_rankings(split, k, part, "random", rank_user)


def baseline_pop(split: DatasetSplit, k: int = 20, part: str = "test") -> MetricsReport:
    """Most train-popular items first (ties by ascending index), minus train items."""
    degrees = split.train.item_degrees
    global_order = np.lexsort((np.arange(len(degrees)), -degrees))

    def rank_user(u: int, train_items: np.ndarray) -> np.ndarray:
        exclude = set(train_items.tolist())
        return np.asarray([i for i in global_order if int(i) not in exclude][:k])

    return _evaluate_fixed_rankings(split, k, part, "pop", rank_user)


def pop_order(train: InteractionMatrix) -> np.ndarray:
    """Global popularity ranking of all items (train counts desc, index asc)."""
    return np.lexsort((np.arange(train.n_items), -train.item_degrees))
