import math

import numpy as np
import pytest

import oracles
from igrsr.data import generate_synthetic, leave_one_out_split
from igrsr.metrics import RankingMetrics, ndcg_at, rank_and_score, recall_at, target_ranks


def test_rank_one_and_three():
    scores = np.array([[-np.inf, 5.0, 4.0, 3.0, 1.0]])
    assert target_ranks(scores, np.array([1]))[0] == 1
    ranks = target_ranks(scores, np.array([3]))
    assert recall_at(ranks, 10) == 1.0 and ndcg_at(ranks, 10) == pytest.approx(0.5)


def test_ties_favor_smaller_id():
    scores = np.array([[-np.inf, 1.0, 1.0, 1.0]])
    assert target_ranks(scores, np.array([1]))[0] == 1
    assert target_ranks(scores, np.array([3]))[0] == 3


def test_history_never_outranks_target_but_target_kept():
    scores = np.array([[-np.inf, 9.0, 8.0, 1.0]])
    ranks = target_ranks(scores, np.array([3]), [np.array([1, 2, 3])])
    assert ranks[0] == 1


def test_brute_force_oracle_agreement():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n_items = int(rng.integers(2, 30))
        b = int(rng.integers(1, 5))
        scores = rng.integers(-3, 4, size=(b, n_items + 1)).astype(float)  # many ties
        scores[:, 0] = -np.inf
        targets = rng.integers(1, n_items + 1, size=b)
        exclude = [rng.choice(np.arange(1, n_items + 1), size=int(rng.integers(0, n_items)), replace=False) for _ in range(b)]
        got = target_ranks(scores, targets, exclude)
        want = [oracles.rank_of_target(list(scores[r]), int(targets[r]), set(exclude[r].tolist())) for r in range(b)]
        assert got.tolist() == want
        for k in (1, 10):
            rec, nd = oracles.recall_ndcg(want, k)
            assert recall_at(got, k) == rec and ndcg_at(got, k) == nd


def test_metric_invariants():
    ranks = np.random.default_rng(1).integers(1, 50, size=300)
    m = RankingMetrics.from_ranks(ranks, np.arange(300))
    assert 0 <= m.recall[10] <= m.recall[20] <= 1
    assert m.ndcg[10] <= m.recall[10] and m.ndcg[20] <= m.recall[20]
    assert set(m.to_dict()) == {"recall@10", "recall@20", "ndcg@10", "ndcg@20"}


class Memorizer:
    """Scores every item the user has seen highest; the metric must ignore them."""

    def __init__(self, ds):
        self.ds = ds

    def scores(self, batch):
        out = np.zeros((len(batch), self.ds.item_count + 1))
        for r, row in enumerate(batch.items):
            out[r, row[row > 0]] = 100.0
        out[:, 0] = -math.inf
        return out


def test_rank_and_score_excludes_history():
    ds = generate_synthetic(users=60, items=100, seed=0)
    test = leave_one_out_split(ds)[2]
    m = rank_and_score(Memorizer(ds), ds, test, n_max=30)
    # with history excluded the memorizer is a constant scorer: ranks follow item ids
    expected = []
    for u in test.users:
        seq = ds.sequences[u]
        tgt = seq[-1]
        expected.append(1 + sum(1 for j in range(1, tgt) if j not in seq[:-1]))
    assert m.ranks.tolist() == expected
