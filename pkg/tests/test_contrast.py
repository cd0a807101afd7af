import math

import numpy as np
import pytest

from textgcn.contrast import (ContrastBatch, SamplerConfig, kcl_loss, localize_batch,
                              sample_batch)
from textgcn.corpus import InteractionMatrix
from textgcn.errors import DataError

from conftest import random_interactions


def infonce_oracle(user_vecs, item_vecs, pos_idx, neg_idx, tau):
    """Independent single-positive InfoNCE, written naively in float64."""
    assert pos_idx.shape[1] == 1
    users = np.asarray(user_vecs, dtype=np.float64)
    items = np.asarray(item_vecs, dtype=np.float64)
    total = 0.0
    for b in range(users.shape[0]):
        u = users[b] / np.linalg.norm(users[b])
        pos = items[pos_idx[b, 0]]
        s_pos = float(u @ (pos / np.linalg.norm(pos)))
        denom = math.exp(s_pos / tau)
        for j in neg_idx[b]:
            neg = items[j]
            s_neg = float(u @ (neg / np.linalg.norm(neg)))
            denom += math.exp(s_neg / tau)
        total += -math.log(math.exp(s_pos / tau) / denom)
    return total / users.shape[0]


class TestSampler:
    def test_with_replacement_when_short(self):
        train = InteractionMatrix.from_rows(1, 10, [[2, 5, 7]])
        cfg = SamplerConfig(pos_k=5, neg_j=3, temperature=1.0, seed=1)
        batch = sample_batch(train, [0], cfg, epoch=0)
        assert batch.positives.shape == (1, 5)
        assert set(batch.positives.ravel().tolist()) <= {2, 5, 7}

    def test_without_replacement_when_enough(self):
        train = InteractionMatrix.from_rows(1, 10, [[0, 1, 2, 3, 4, 5]])
        cfg = SamplerConfig(pos_k=4, neg_j=2, temperature=1.0, seed=1)
        batch = sample_batch(train, [0], cfg, epoch=0)
        assert len(set(batch.positives[0].tolist())) == 4

    def test_negatives_exclude_interactions(self, rng):
        train = random_interactions(rng, 20, 15, 10)
        cfg = SamplerConfig(pos_k=2, neg_j=8, temperature=1.0, seed=3)
        batch = sample_batch(train, np.arange(20), cfg, epoch=2)
        for row, u in enumerate(batch.users):
            interacted = set(train.items_of(int(u)).tolist())
            assert not (set(batch.negatives[row].tolist()) & interacted)
            assert set(batch.positives[row].tolist()) <= interacted

    def test_all_items_interacted_errors(self):
        train = InteractionMatrix.from_rows(1, 3, [[0, 1, 2]])
        cfg = SamplerConfig(pos_k=1, neg_j=1, temperature=1.0)
        with pytest.raises(DataError, match="no negatives available"):
            sample_batch(train, [0], cfg, epoch=0)

    def test_zero_degree_errors(self):
        train = InteractionMatrix.from_rows(2, 3, [[0], []])
        cfg = SamplerConfig(pos_k=1, neg_j=1, temperature=1.0)
        with pytest.raises(DataError, match="zero train degree"):
            sample_batch(train, [1], cfg, epoch=0)

    def test_deterministic_streams(self, rng):
        train = random_interactions(rng, 10, 30, 6)
        cfg = SamplerConfig(pos_k=3, neg_j=5, temperature=1.0, seed=9)
        a = sample_batch(train, np.arange(10), cfg, epoch=4)
        b = sample_batch(train, np.arange(10), cfg, epoch=4)
        assert np.array_equal(a.positives, b.positives)
        assert np.array_equal(a.negatives, b.negatives)
        # stream depends only on (seed, epoch, user): a permuted user list
        # yields the same draws per user
        perm = rng.permutation(10)
        c = sample_batch(train, perm, cfg, epoch=4)
        back = np.argsort(perm)
        assert np.array_equal(c.positives[back], a.positives)
        assert np.array_equal(c.negatives[back], a.negatives)
        d = sample_batch(train, np.arange(10), cfg, epoch=5)
        assert not np.array_equal(a.negatives, d.negatives)


def test_localize_batch_roundtrip():
    batch = ContrastBatch(users=np.array([0, 1]),
                          positives=np.array([[7, 3], [3, 3]]),
                          negatives=np.array([[9, 7], [1, 9]]))
    unique_items, pos_local, neg_local = localize_batch(batch)
    assert unique_items.tolist() == [1, 3, 7, 9]
    assert np.array_equal(unique_items[pos_local], batch.positives)
    assert np.array_equal(unique_items[neg_local], batch.negatives)


class TestLossValues:
    def test_scalar_case(self):
        # sim+ = 1, sim- = 0, tau = 1 -> log(1 + e^-1)
        user = np.array([[1.0, 0.0]])
        items = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss, _, _ = kcl_loss(user, items, np.array([[0]]), np.array([[1]]), 1.0)
        assert abs(loss - 0.3132616875182228) < 1e-6

    def test_all_sims_equal(self):
        # every term is log(1 + J); with J = 1 that is log 2
        user = np.array([[1.0, 0.0]])
        items = np.array([[2.0, 0.0], [0.5, 0.0]])
        loss, _, _ = kcl_loss(user, items, np.array([[0]]), np.array([[1]]), 0.7)
        assert abs(loss - math.log(2.0)) < 1e-9

    def test_k1_matches_independent_infonce(self, rng):
        for _ in range(100):
            n_users = int(rng.integers(1, 6))
            n_items = int(rng.integers(2, 9))
            d = int(rng.integers(2, 6))
            users = rng.standard_normal((n_users, d))
            items = rng.standard_normal((n_items, d))
            pos = rng.integers(0, n_items, size=(n_users, 1))
            neg = rng.integers(0, n_items, size=(n_users, int(rng.integers(1, 5))))
            tau = float(rng.uniform(0.1, 2.0))
            loss, _, _ = kcl_loss(users, items, pos, neg, tau)
            assert abs(loss - infonce_oracle(users, items, pos, neg, tau)) < 1e-6

    def test_positivity(self, rng):
        for _ in range(50):
            users = rng.standard_normal((3, 4))
            items = rng.standard_normal((6, 4))
            pos = rng.integers(0, 6, size=(3, 2))
            neg = rng.integers(0, 6, size=(3, 3))
            loss, _, _ = kcl_loss(users, items, pos, neg, 0.5)
            assert loss > 0

    def test_scale_invariance_of_rows(self, rng):
        users = rng.standard_normal((3, 4))
        items = rng.standard_normal((6, 4))
        pos = rng.integers(0, 6, size=(3, 2))
        neg = rng.integers(0, 6, size=(3, 3))
        base, _, _ = kcl_loss(users, items, pos, neg, 0.5)
        users2 = users.copy()
        users2[1] *= 5.0
        items2 = items.copy()
        items2[4] *= 0.01
        scaled, _, _ = kcl_loss(users2, items2, pos, neg, 0.5)
        assert abs(base - scaled) < 1e-5

    def test_monotone_in_positive_similarity(self):
        items = np.array([[1.0, 0.0], [0.0, 1.0]])
        losses = []
        for angle in (0.9, 0.6, 0.3, 0.0):
            user = np.array([[math.cos(angle), math.sin(angle)]])
            loss, _, _ = kcl_loss(user, items, np.array([[0]]), np.array([[1]]), 1.0)
            losses.append(loss)
        # angle shrinking -> sim(u, pos) grows, sim(u, neg) shrinks -> loss falls
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_duplicated_positives_leave_loss_unchanged(self, rng):
        users = rng.standard_normal((4, 5))
        items = rng.standard_normal((9, 5))
        pos = rng.integers(0, 9, size=(4, 3))
        neg = rng.integers(0, 9, size=(4, 4))
        a, _, _ = kcl_loss(users, items, pos, neg, 0.3)
        b, _, _ = kcl_loss(users, items, np.tile(pos, (1, 2)), neg, 0.3)
        assert abs(a - b) < 1e-6

    def test_zero_norm_row_errors(self):
        users = np.zeros((1, 3))
        items = np.ones((2, 3))
        with pytest.raises(DataError, match="zero-norm"):
            kcl_loss(users, items, np.array([[0]]), np.array([[1]]), 1.0)

    def test_deterministic_grads(self, rng):
        users = rng.standard_normal((5, 4))
        items = rng.standard_normal((8, 4))
        pos = rng.integers(0, 8, size=(5, 2))
        neg = rng.integers(0, 8, size=(5, 6))
        a = kcl_loss(users, items, pos, neg, 0.2)
        b = kcl_loss(users, items, pos, neg, 0.2)
        assert a[0] == b[0]
        assert a[1].tobytes() == b[1].tobytes()
        assert a[2].tobytes() == b[2].tobytes()


def test_gradients_match_central_differences(rng):
    h = 1e-6
    for _ in range(100):
        n_users = int(rng.integers(1, 5))
        n_items = int(rng.integers(2, 8))
        d = int(rng.integers(2, 5))
        k = int(rng.integers(1, 4))
        j = int(rng.integers(1, 5))
        users = rng.standard_normal((n_users, d))
        items = rng.standard_normal((n_items, d))
        pos = rng.integers(0, n_items, size=(n_users, k))
        neg = rng.integers(0, n_items, size=(n_users, j))
        tau = float(rng.uniform(0.2, 1.5))
        _, d_user, d_item = kcl_loss(users, items, pos, neg, tau)

        def loss_of(u, it):
            return kcl_loss(u, it, pos, neg, tau)[0]

        for target, grad in ((users, d_user), (items, d_item)):
            for idx in np.ndindex(target.shape):
                plus = target.copy()
                plus[idx] += h
                minus = target.copy()
                minus[idx] -= h
                if target is users:
                    numeric = (loss_of(plus, items) - loss_of(minus, items)) / (2 * h)
                else:
                    numeric = (loss_of(users, plus) - loss_of(users, minus)) / (2 * h)
                denom = max(abs(numeric), abs(float(grad[idx])), 1e-4)
                assert abs(numeric - grad[idx]) / denom <= 1e-3
