"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines; tolerances are pinned here, not configurable.
"""

import math
import random
import time

import numpy as np
from scipy.integrate import quad

from naive_interp import naive_evaluate
from rand_expr import random_expr, random_raw_panel
from conftest import make_constant_tr_panel

from signalforge.agents import RuleJudge, RuleJudgeCfg, ScriptedWriter, ScriptedWriterCfg
from signalforge.dsl import evaluate, evaluate_expr, parse
from signalforge.ideas import IDEA_POOL
from signalforge.kb import KnowledgeBase, insert, load as kb_load, make_record, persist
from signalforge.loops import (
    CostLedger, InnerLoopConfig, OuterLoopConfig, cost_report, inner_loop,
    outer_loop,
)
from signalforge.metrics import information_coefficient
from signalforge.panel import PlantedPattern, SynthParams, synth_panel
from signalforge.regret import (
    DatasetCounts, Observation, Posterior, RegretConfig, entropy,
    information_gain, make_synthetic_trace, optimal_policy, pevi,
    posterior_update, random_mdp, regret_report, simulate_two_loop,
)
from signalforge.winrate import CandidateRef, leaderboard, metric_comparator, win_rate_matrix


def _result(n, title, passed=True):
    print(f"\nACCEPTANCE {n:2d} {title}: {'PASS' if passed else 'FAIL'}")


def _guard(n, title):
    """Context manager printing the PASS/FAIL line for a criterion."""
    class G:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            _result(n, title, exc_type is None)
            return False
    return G()


def test_criterion_01_dsl_oracle_equivalence():
    with _guard(1, "DSL oracle equivalence (200 random programs, exact)"):
        t0 = time.monotonic()
        rng = random.Random(20240501)
        for _ in range(200):
            panel = random_raw_panel(rng, n_dates=10, n_symbols=5)
            expr = random_expr(rng, depth=3)
            vec = evaluate_expr(expr, panel)
            ref = naive_evaluate(expr, panel)
            assert np.array_equal(vec, ref, equal_nan=True), f"mismatch: {expr}"
        assert time.monotonic() - t0 < 10.0


def test_criterion_02_atr_breakout_fidelity():
    with _guard(2, "volatility-breakout fixture matches scalar arithmetic"):
        n = 30
        panel = make_constant_tr_panel(n_dates=n, n_symbols=2, breakout_day=n - 1)
        tr = ("max2(high - low, max2(abs(high - shift(pre_close, 1)), "
              "abs(low - shift(pre_close, 1))))")
        atr = f"roll_mean({tr}, 14)"
        threshold = f"(shift(high, 1) + 1.5 * {atr})"
        spec = parse(f"signal brk window 16 inputs high,low,pre_close := "
                     f"fillna(max2(where(gt(high, {threshold}), "
                     f"(high - {threshold}) / {atr}, 0), 0), 0)")
        out = evaluate(spec, panel)

        # independent scalar derivation, row by row, for the active symbol:
        # TR = 2 from t=2 on (high-low = 2 dominates), ATR valid from t=15
        expected = np.zeros(n)
        atr_vals = {t: 2.0 for t in range(15, n - 1)}
        atr_vals[n - 1] = (13 * 2.0 + 5.5) / 14.0  # breakout day joins its own window
        for t in range(n):
            if t < 15:
                expected[t] = 0.0  # warm-up, NaN before fillna
                continue
            high_t = 55.0 if t == n - 1 else 50.0
            thr = 50.0 + 1.5 * atr_vals[t]
            expected[t] = max((high_t - thr) / atr_vals[t], 0.0) if high_t > thr else 0.0
        assert np.all(np.abs(out[:, 0] - expected) < 1e-12)
        # threshold algebra on quiet rows: prev high 50, ATR 2 -> 53 exactly
        thr_spec = parse(f"signal thr window 16 inputs high,low,pre_close := {threshold}")
        thr_out = evaluate(thr_spec, panel)
        assert np.all(np.abs(thr_out[15:n - 1, 1] - 53.0) < 1e-12)


def test_criterion_03_ic_correctness():
    with _guard(3, "IC matches direct Pearson; affine/antisymmetry invariances"):
        rng = np.random.default_rng(99)
        for _ in range(100):
            m = int(rng.integers(5, 40))
            sig = rng.normal(size=(1, m))
            fwd = rng.normal(size=(1, m))
            if m > 6:
                sig[0, rng.integers(0, m, 2)] = np.nan
            _, ic = information_coefficient(sig, fwd)
            good = np.isfinite(sig[0]) & np.isfinite(fwd[0])
            x, y = sig[0][good], fwd[0][good]
            xd, yd = x - x.mean(), y - y.mean()
            direct = float((xd * yd).sum()) / math.sqrt(float((xd * xd).sum())
                                                        * float((yd * yd).sum()))
            assert abs(ic - direct) < 1e-10
            _, ic_aff = information_coefficient(1.7 * sig + 0.3, fwd)
            assert abs(ic_aff - ic) < 1e-12
            _, ic_neg = information_coefficient(-sig, fwd)
            assert ic_neg == -ic  # exact


class _RampJudge:
    def __init__(self, T):
        self.T = T
        self.calls = 0

    def review(self, candidate, ctx, knowledge):
        self.calls += 1
        s = self.calls / self.T
        return s, f"score={s:.3f}; flags=none"


class _FixedWriter:
    def propose(self, ctx, knowledge):
        return "signal s window 1 inputs close := close"


def test_criterion_04_algorithm_fidelity():
    with _guard(4, "inner-loop step order, stop rule, outer KB growth"):
        trace = inner_loop("p", KnowledgeBase(), _FixedWriter(), _RampJudge(8),
                           InnerLoopConfig(beta=0.75, max_iters=8))
        assert trace.stop_reason == "threshold"
        assert len(trace.records) == 6  # 6/8 = 0.75 is the first score >= beta
        expected_tags = ["problem"] + ["knowledge", "candidate", "knowledge",
                                       "review"] * 6
        assert trace.ctx_tags == expected_tags

        panel = synth_panel(21, 160, 24, SynthParams(planted=PlantedPattern(0.25)))
        writer = ScriptedWriter(ScriptedWriterCfg(seed=11))
        judge = RuleJudge(RuleJudgeCfg(validation_panel=panel.slice_dates(0, 48)))
        kb, records = outer_loop(OuterLoopConfig(n_iterations=3, idea_seed=11),
                                 InnerLoopConfig(), panel, writer, judge)
        assert len(kb) == 3 and len(records) == 3


def test_criterion_05_cost_scaling():
    with _guard(5, "token cost grows quadratically in inner iterations"):
        t0 = time.monotonic()
        seed_kb = KnowledgeBase()
        from signalforge.kb import MetricsSummary
        for i in range(5):
            insert(seed_kb, make_record(
                f"abnormal volume precedes the move, variant {i}",
                "signal s window 1 inputs close := close", 0.6,
                "score=0.600; parse=ok; inputs=ok; valid_ratio=1.000; "
                "ic_preview=0.0100; flags=low_ic",
                MetricsSummary(0.05, 0.4, 1.0), "rejected", (i + 1, 1)))

        class _FlatJudge:
            def review(self, candidate, ctx, knowledge):
                return 0.5, "score=0.500; flags=low_ic"

        ledger = CostLedger()
        totals = {}
        for k, T in enumerate((4, 8, 16, 32), start=1):
            writer = ScriptedWriter(ScriptedWriterCfg(seed=1))
            trace = inner_loop("abnormal volume precedes the move", seed_kb,
                               writer, _FlatJudge(),
                               InnerLoopConfig(beta=1.0, max_iters=T))
            assert len(trace.records) == T
            ledger.add_run(k, trace)
            totals[T] = sum(r.tokens_in + r.tokens_out for r in trace.records)
        summary = cost_report(ledger)
        assert 1.8 <= summary.fit_exponent <= 2.2
        assert 3.5 <= totals[32] / totals[16] <= 4.5
        assert time.monotonic() - t0 < 30.0


def test_criterion_06_self_improvement_direction():
    with _guard(6, "self-improvement trend and leaderboard on planted pattern"):
        t0 = time.monotonic()
        panel = synth_panel(21, 160, 24, SynthParams(planted=PlantedPattern(0.25)))
        val = panel.slice_dates(0, 48)
        pool = tuple(IDEA_POOL[::5])  # one phrasing per theme: dense idea matches
        good_seeds = 0
        for seed in range(5):
            writer = ScriptedWriter(ScriptedWriterCfg(seed=seed))
            judge = RuleJudge(RuleJudgeCfg(validation_panel=val))
            kb, records = outer_loop(
                OuterLoopConfig(n_iterations=30, idea_seed=seed, idea_pool=pool),
                InnerLoopConfig(), panel, writer, judge)
            kb_recs = kb.ordered()
            ics = np.array([r.metrics.ic_mean for r in kb_recs])
            third = max(1, len(kb_recs) // 3)
            trend_ok = np.nanmean(ics[-third:]) >= np.nanmean(ics[:third])

            def cand(r):
                rep = r.report
                return CandidateRef(r.idea, r.signal_text, r.score,
                                    rep.ic_mean if rep else math.nan,
                                    rep.sharpe if rep else math.nan)
            groups = [[cand(r) for r in ch] for ch in np.array_split(records, 3)]
            board = leaderboard(win_rate_matrix(groups, metric_comparator("ic_mean")))
            pos = [g for g, _ in board].index("g3") + 1
            good_seeds += int(trend_ok and pos <= 2)
        assert good_seeds >= 4, f"only {good_seeds}/5 seeds improved"
        assert time.monotonic() - t0 < 120.0


def test_criterion_07_sublinear_regret():
    with _guard(7, "median regret slope sublinear; controls behave"):
        t0 = time.monotonic()
        slopes = []
        for seed in range(5):
            cfg = RegretConfig(gamma=0.9, epsilon=1e-3, seed=seed,
                               n_episodes=40, episode_len=30)
            trace = simulate_two_loop(Posterior.uniform_prior(5, 3), cfg)
            slopes.append(regret_report(trace).slope)
        assert float(np.median(slopes)) < 0.95

        mdp = random_mdp(42, 5, 3, 0.9)
        cfg = RegretConfig(gamma=0.9, epsilon=1e-3, seed=1,
                           n_episodes=15, episode_len=10)
        control = simulate_two_loop(Posterior.point_mass(mdp), cfg, true_mdp=mdp)
        assert all(e.regret_inst <= cfg.epsilon for e in control.episodes)

        linear = make_synthetic_trace([float(n) for n in range(1, 41)])
        assert abs(regret_report(linear).slope - 1.0) <= 0.02
        assert time.monotonic() - t0 < 60.0


def test_criterion_08_pessimism():
    with _guard(8, "PEVI: monotone in c, avoids uncovered actions, exact limit"):
        for trial in range(50):
            mdp = random_mdp(trial, 4, 2, 0.85)
            rng = np.random.default_rng(trial)
            obs = []
            for _ in range(150):
                s = int(rng.integers(4))
                a = int(rng.integers(2))
                r = int(rng.random() < mdp.r[s, a])
                obs.append(Observation(s, a, r, int(rng.choice(4, p=mdp.P[s, a]))))
            prev = None
            for c in (0.0, 0.25, 0.5, 1.0, 2.0):
                V, _ = pevi(obs, 4, 2, 0.85, c)
                if prev is not None:
                    assert np.all(V <= prev + 1e-9)
                prev = V

        rng = np.random.default_rng(0)
        covered = [Observation(int(rng.integers(2)), 0,
                               int(rng.random() < 0.8), int(rng.integers(2)))
                   for _ in range(400)]
        V, pi = pevi(covered, 2, 2, 0.9, c=1.0)
        assert np.all(pi == 0) and np.all(V > 0)

        matches = 0
        n = 10_000_000  # >= 1e4 visits per (s, a), by a wide margin
        for trial in range(100):
            mdp = random_mdp(1000 + trial, 5, 3, 0.9)
            srng = np.random.default_rng(5000 + trial)
            trans = np.zeros((5, 3, 5))
            rew = np.zeros((5, 3))
            for s in range(5):
                for a in range(3):
                    trans[s, a] = srng.multinomial(n, mdp.P[s, a])
                    rew[s, a] = srng.binomial(n, mdp.r[s, a])
            counts = DatasetCounts(trans, rew, np.full((5, 3), float(n)))
            _, pi_hat = pevi(counts, 5, 3, 0.9, c=0.0)
            _, pi_star = optimal_policy(mdp)
            matches += int(np.array_equal(pi_hat, pi_star))
        assert matches >= 99, f"planner matched in only {matches}/100 trials"


def test_criterion_09_entropy_numerics():
    with _guard(9, "posterior entropy closed form vs quadrature; info gain >= 0"):
        from scipy.special import betaln

        def beta_entropy_quadrature(a, b):
            def f(x):
                logp = (a - 1) * math.log(x) + (b - 1) * math.log(1 - x) - betaln(a, b)
                return -math.exp(logp) * logp
            val, _ = quad(f, 1e-12, 1 - 1e-12, limit=200)
            return val

        post = Posterior(alpha=np.array([[[2.0, 1.0]]]),
                         beta_a=np.ones((1, 1)), beta_b=np.ones((1, 1)))
        got = entropy(post)  # the Beta(1,1) cell contributes zero
        closed = -math.log(2.0) + 0.5
        assert abs(got - closed) < 1e-9
        assert abs(got - beta_entropy_quadrature(2.0, 1.0)) < 1e-9

        rng = np.random.default_rng(7)
        mdp = random_mdp(77, 3, 2, 0.9)
        post = Posterior.uniform_prior(3, 2)
        gains = []
        s = 0
        for _ in range(1000):
            a = int(rng.integers(2))
            r = int(rng.random() < mdp.r[s, a])
            s2 = int(rng.choice(3, p=mdp.P[s, a]))
            new = posterior_update(post, Observation(s, a, r, s2))
            gains.append(information_gain(post, new))
            post, s = new, s2
        assert float(np.mean(gains)) >= 0.0


def test_criterion_10_determinism_and_persistence(tmp_path):
    with _guard(10, "scripted run replays bit-identically through persistence"):
        from signalforge.cli import main

        panel_dir = tmp_path / "panel"
        assert main(["synth-data", "--seed", "21", "--dates", "160", "--symbols",
                     "24", "--planted-ic", "0.25", "--out", str(panel_dir)]) == 0

        run_a, run_b = tmp_path / "run_a", tmp_path / "run_b"
        for out in (run_a, run_b):
            assert main(["run-outer", "--panel", str(panel_dir), "--out", str(out),
                         "--k", "8", "--seed", "5"]) == 0
        for name in ("records.jsonl", "knowledge.kb.jsonl", "cost_summary.json"):
            assert (run_a / name).read_bytes() == (run_b / name).read_bytes()

        kb_a = kb_load(str(run_a / "knowledge.kb.jsonl"))
        round_trip = tmp_path / "kb_round.jsonl"
        persist(kb_a, str(round_trip))
        kb_b = kb_load(str(round_trip))
        assert set(kb_a.records) == set(kb_b.records)
        for rid, rec in kb_a.records.items():
            other = kb_b.records[rid]
            assert (rec.idea, rec.signal_text, rec.score, rec.outcome,
                    rec.iteration) == (other.idea, other.signal_text,
                                       other.score, other.outcome, other.iteration)
            assert np.array_equal(rec.embedding, other.embedding)

        rep_a, rep_b = tmp_path / "rep_a", tmp_path / "rep_b"
        for out in (rep_a, rep_b):
            assert main(["report", "--records", str(run_a / "records.jsonl"),
                         "--groups", "3", "--out", str(out)]) == 0
        for name in ("groups.csv", "winrate.csv", "winrate.json", "leaderboard.csv"):
            assert (rep_a / name).read_bytes() == (rep_b / name).read_bytes()


def test_criterion_11_win_rate_algebra():
    with _guard(11, "win-rate matrices satisfy w + w^T = 1 off-diagonal"):
        rng = np.random.default_rng(123)
        checked = 0
        for trial in range(30):
            G = int(rng.integers(1, 6))
            ideas = [f"idea{i}" for i in range(int(rng.integers(1, 8)))]
            groups = []
            for _ in range(G):
                groups.append([CandidateRef(str(rng.choice(ideas)), "sig",
                                            float(rng.random()),
                                            float(rng.normal()), 0.0)
                               for _ in range(int(rng.integers(1, 7)))])
            m = win_rate_matrix(groups, metric_comparator("ic_mean"))
            for i in range(G):
                assert m.w[i, i] == 0.5
                for j in range(G):
                    if i != j and m.n[i, j] > 0:
                        assert m.w[i, j] + m.w[j, i] == 1.0
                        checked += 1
        assert checked > 50  # the corpus really exercised the invariant
