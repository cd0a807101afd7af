"""Contrastive batch sampling and the k-positive contrastive objective.

Each batch user anchors k positives drawn from their training history and
J shared negatives drawn uniformly from the items they never interacted
with. Every positive is contrasted against that positive plus the J
negatives only (other positives never enter the denominator), with cosine
similarity scaled by a temperature. Per-user RNG streams are keyed by
(seed, epoch, user) so sampling is reproducible no matter how work is
scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import InteractionMatrix
from .errors import DataError


@dataclass(frozen=True)
class SamplerConfig:
    """Positives per user, negatives per user, softmax temperature, seed."""

    pos_k: int
    neg_j: int
    temperature: float
    seed: int = 0
    batch_users: int = 1024

    def __post_init__(self):
        if self.pos_k < 1 or self.neg_j < 1 or self.batch_users < 1:
            raise DataError("pos_k, neg_j and batch_users must be >= 1")
        if self.temperature <= 0:
            raise DataError("temperature must be > 0")


@dataclass
class ContrastBatch:
    """Sampled indices, all in the global item namespace."""

    users: np.ndarray       # (B,)
    positives: np.ndarray   # (B, k)
    negatives: np.ndarray   # (B, J)


def _user_rng(seed: int, epoch: int, user: int) -> np.random.Generator:
    return np.random.default_rng((seed, epoch, int(user)))


def _sample_negatives(rng: np.random.Generator, interacted: np.ndarray,
                      n_items: int, count: int) -> np.ndarray:
    """Uniform over the complement of `interacted`, by rejection; duplicates allowed."""
    out = np.empty(count, dtype=np.int64)
    filled = 0
    while filled < count:
        draw = rng.integers(0, n_items, size=max(16, 2 * (count - filled)))
        pos = np.searchsorted(interacted, draw)
        pos_clip = np.minimum(pos, len(interacted) - 1)
        hit = interacted[pos_clip] == draw if len(interacted) else np.zeros(len(draw), bool)
        keep = draw[~hit]
        take = min(len(keep), count - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
    return out


def sample_batch(train: InteractionMatrix, users: np.ndarray | list[int],
                 cfg: SamplerConfig, epoch: int) -> ContrastBatch:
    """Draw positives and negatives for one batch of users.

    Positives are uniform without replacement when the user has at least k
    training items, otherwise with replacement so the count is always
    exactly k.
    """
    users = np.asarray(users, dtype=np.int64)
    positives = np.empty((len(users), cfg.pos_k), dtype=np.int64)
    negatives = np.empty((len(users), cfg.neg_j), dtype=np.int64)
    for row, u in enumerate(users):
        items = train.items_of(int(u))
        if len(items) == 0:
            raise DataError(f"user {u} has zero train degree")
        if len(items) >= train.n_items:
            raise DataError(f"no negatives available for user {u}")
        rng = _user_rng(cfg.seed, epoch, int(u))
        positives[row] = rng.choice(items, size=cfg.pos_k, replace=len(items) < cfg.pos_k)
        negatives[row] = _sample_negatives(rng, items, train.n_items, cfg.neg_j)
    return ContrastBatch(users=users, positives=positives, negatives=negatives)


def localize_batch(batch: ContrastBatch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unique item IDs of the batch plus positive/negative indices into them."""
    n_users, k = batch.positives.shape
    flat = np.concatenate([batch.positives.ravel(), batch.negatives.ravel()])
    unique_items, inverse = np.unique(flat, return_inverse=True)
    pos_local = inverse[:n_users * k].reshape(batch.positives.shape)
    neg_local = inverse[n_users * k:].reshape(batch.negatives.shape)
    return unique_items, pos_local, neg_local


def kcl_loss(
    user_vecs: np.ndarray,
    item_vecs: np.ndarray,
    pos_idx: np.ndarray,
    neg_idx: np.ndarray,
    temperature: float,
    chunk: int = 256,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss plus exact gradients w.r.t. the user and item embedding rows.

    user_vecs is (B, d); item_vecs holds one row per distinct batch item;
    pos_idx (B, k) and neg_idx (B, J) index into item_vecs. Internals run
    in float64 with max-subtracted log-sum-exp; gradients come back as
    float32. Item-row accumulation happens in ascending user order, so the
    result is bitwise reproducible.
    """
    if temperature <= 0:
        raise DataError("temperature must be > 0")
    user_vecs = np.asarray(user_vecs)
    item_vecs = np.asarray(item_vecs)
    n_users, k = pos_idx.shape
    n_neg = neg_idx.shape[1]

    u64 = user_vecs.astype(np.float64)
    i64 = item_vecs.astype(np.float64)
    u_norm = np.linalg.norm(u64, axis=1)
    i_norm = np.linalg.norm(i64, axis=1)
    if np.any(u_norm == 0) or np.any(i_norm == 0):
        raise DataError("zero-norm embedding row")
    u_unit = u64 / u_norm[:, None]
    i_unit = i64 / i_norm[:, None]

    inv_scale = 1.0 / (n_users * k * temperature)
    loss = 0.0
    d_user = np.zeros_like(u64)
    d_item = np.zeros_like(i64)

    for start in range(0, n_users, chunk):
        stop = min(start + chunk, n_users)
        uu = u_unit[start:stop]                      # (C, d)
        pi = pos_idx[start:stop]
        ni = neg_idx[start:stop]
        pos_unit = i_unit[pi]                        # (C, k, d)
        neg_unit = i_unit[ni]                        # (C, J, d)
        pos_sim = np.einsum("cd,ckd->ck", uu, pos_unit)
        neg_sim = np.einsum("cd,cjd->cj", uu, neg_unit)

        a = pos_sim / temperature
        b = neg_sim / temperature
        m = np.maximum(a.max(axis=1), b.max(axis=1))[:, None]
        ea = np.exp(a - m)
        eb = np.exp(b - m)
        z = ea + eb.sum(axis=1)[:, None]             # (C, k)
        loss += float(np.sum(-(a - m) + np.log(z)))

        coef_pos = (ea / z - 1.0) * inv_scale        # dL/d pos_sim
        coef_neg = eb * (1.0 / z).sum(axis=1)[:, None] * inv_scale

        # cosine backprop: d sim(u,v)/du = (v_unit - sim * u_unit) / |u|
        du = (
            np.einsum("ck,ckd->cd", coef_pos, pos_unit)
            - np.sum(coef_pos * pos_sim, axis=1)[:, None] * uu
            + np.einsum("cj,cjd->cd", coef_neg, neg_unit)
            - np.sum(coef_neg * neg_sim, axis=1)[:, None] * uu
        ) / u_norm[start:stop, None]
        d_user[start:stop] = du

        dpos = (coef_pos[:, :, None] * (uu[:, None, :] - pos_sim[:, :, None] * pos_unit)
                / i_norm[pi][:, :, None])
        dneg = (coef_neg[:, :, None] * (uu[:, None, :] - neg_sim[:, :, None] * neg_unit)
                / i_norm[ni][:, :, None])
        np.add.at(d_item, pi.ravel(), dpos.reshape(-1, d_item.shape[1]))
        np.add.at(d_item, ni.ravel(), dneg.reshape(-1, d_item.shape[1]))

    loss /= n_users * k
    if not np.isfinite(loss):
        raise DataError("non-finite contrastive loss")
    return loss, d_user.astype(np.float32), d_item.astype(np.float32)
