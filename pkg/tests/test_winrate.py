import math

import numpy as np
import pytest

from signalforge.winrate import (
    DRAW, LOSS, WIN, CandidateRef, leaderboard, leaderboard_csv,
    metric_comparator, win_rate_matrix,
)


def _cand(idea, ic, score=0.5):
    return CandidateRef(idea=idea, signal_text=f"sig {idea}", score=score,
                        ic_mean=ic, sharpe=0.0)


class TestWinRateMatrix:
    def test_single_group_diagonal(self):
        m = win_rate_matrix([[_cand("a", 0.1)]], metric_comparator())
        assert m.w.shape == (1, 1)
        assert m.w[0, 0] == 0.5

    def test_later_group_always_wins(self):
        groups = [[_cand("a", 0.0), _cand("b", 0.0)],
                  [_cand("a", 0.0), _cand("b", 0.0)],
                  [_cand("a", 0.0), _cand("b", 0.0)]]

        def later_wins(a, b):
            return LOSS  # the ordered pair is (earlier-group, later-group)

        m = win_rate_matrix(groups, later_wins)
        for i in range(3):
            for j in range(3):
                if i < j:
                    assert m.w[i, j] == 0.0
                elif i > j:
                    assert m.w[i, j] == 1.0

    def test_matches_brute_force_counts(self):
        rng = np.random.default_rng(9)
        ideas = [f"idea{i}" for i in range(6)]
        groups = [[_cand(rng.choice(ideas), float(rng.normal())) for _ in range(8)]
                  for _ in range(3)]
        cmp = metric_comparator("ic_mean")
        m = win_rate_matrix(groups, cmp)
        for i in range(3):
            for j in range(3):
                if i == j:
                    continue
                wins = draws = n = 0
                for a in groups[i]:
                    for b in groups[j]:
                        if a.idea != b.idea:
                            continue
                        n += 1
                        r = cmp(a, b)
                        wins += r == WIN
                        draws += r == DRAW
                assert m.n[i, j] == n
                if n:
                    assert m.w[i, j] == pytest.approx((wins + 0.5 * draws) / n)

    def test_antisymmetry_invariant(self):
        rng = np.random.default_rng(11)
        groups = [[_cand(f"i{rng.integers(4)}", float(rng.normal()))
                   for _ in range(6)] for _ in range(4)]
        m = win_rate_matrix(groups, metric_comparator())
        for i in range(4):
            assert m.w[i, i] == 0.5
            for j in range(4):
                if i != j and m.n[i, j] > 0:
                    assert m.w[i, j] + m.w[j, i] == pytest.approx(1.0, abs=0)

    def test_no_shared_ideas_gives_nan(self):
        groups = [[_cand("a", 0.1)], [_cand("b", 0.2)]]
        m = win_rate_matrix(groups, metric_comparator())
        assert math.isnan(m.w[0, 1]) and m.n[0, 1] == 0

    def test_draws_split_evenly(self):
        groups = [[_cand("a", 0.1)], [_cand("a", 0.1)]]
        m = win_rate_matrix(groups, metric_comparator())
        assert m.w[0, 1] == 0.5 and m.w[1, 0] == 0.5


class TestLeaderboard:
    def test_later_always_wins_ranking(self):
        groups = [[_cand("a", 0.0)], [_cand("a", 0.0)], [_cand("a", 0.0)]]
        m = win_rate_matrix(groups, lambda a, b: LOSS)
        board = leaderboard(m)
        assert [g for g, _ in board] == ["g3", "g2", "g1"]
        assert board[0][1] == 1.0

    def test_all_tied_preserves_label_order(self):
        groups = [[_cand("a", 0.1)]] * 3
        m = win_rate_matrix(groups, lambda a, b: DRAW)
        board = leaderboard(m)
        assert [g for g, _ in board] == ["g1", "g2", "g3"]

    def test_matches_row_mean(self):
        rng = np.random.default_rng(13)
        groups = [[_cand(f"i{rng.integers(3)}", float(rng.normal()))
                   for _ in range(5)] for _ in range(3)]
        m = win_rate_matrix(groups, metric_comparator())
        board = dict(leaderboard(m))
        for i, g in enumerate(m.groups):
            vals = [m.w[i, j] for j in range(3) if j != i and not math.isnan(m.w[i, j])]
            if vals:
                assert board[g] == pytest.approx(float(np.mean(vals)))

    def test_csv_shapes(self):
        groups = [[_cand("a", 0.3)], [_cand("a", 0.1)]]
        m = win_rate_matrix(groups, metric_comparator())
        csv_text = m.to_csv()
        assert csv_text.splitlines()[0] == "group,g1,g2"
        board_csv = leaderboard_csv(leaderboard(m))
        assert board_csv.splitlines()[0] == "rank,group,mean_win_rate"
        assert board_csv.splitlines()[1].startswith("1,g1")
