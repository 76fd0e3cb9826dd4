"""Tabular-MDP laboratory: Bayesian posterior over environments, entropy and
information gain, epsilon-optimal planning, pessimistic value iteration over
an offline dataset, and an episodic two-loop simulation whose cumulative
regret curve can be checked for sublinearity.

Conventions: rewards are Bernoulli with means in [0, 1], so values are
bounded by L = 1/(1 - gamma). The posterior is Dirichlet per (s, a) row and
Beta per (s, a) reward. Information gain is reported as the entropy decrease
H_before - H_after, which is nonnegative in expectation.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import gammaln, psi

from .errors import BadParamsError, EmptyTraceError, NotSuccessiveError

_ROW_TOL = 1e-12


@dataclass(frozen=True)
class TabularMdp:
    P: np.ndarray          # (S, A, S) transition probabilities
    r: np.ndarray          # (S, A) mean rewards in [0, 1]
    gamma: float
    s0: int = 0

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    @property
    def value_bound(self) -> float:
        return 1.0 / (1.0 - self.gamma)

    def validate(self) -> None:
        S, A = self.r.shape
        if self.P.shape != (S, A, S):
            raise BadParamsError(f"P shape {self.P.shape} != {(S, A, S)}")
        if not 0.0 < self.gamma < 1.0:
            raise BadParamsError(f"gamma must be in (0, 1), got {self.gamma}")
        if np.any(self.r < 0.0) or np.any(self.r > 1.0):
            raise BadParamsError("rewards must lie in [0, 1]")
        if np.any(np.abs(self.P.sum(-1) - 1.0) > _ROW_TOL) or np.any(self.P < 0):
            raise BadParamsError("every transition row must be a distribution")
        if not 0 <= self.s0 < S:
            raise BadParamsError(f"s0 {self.s0} out of range")


def random_mdp(seed: int, n_states: int, n_actions: int, gamma: float,
               s0: int = 0) -> TabularMdp:
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    r = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    mdp = TabularMdp(P=P, r=r, gamma=gamma, s0=s0)
    mdp.validate()
    return mdp


# -- planning -------------------------------------------------------------------

def value_iteration(mdp: TabularMdp, tol: float = 1e-8,
                    max_iter: int = 1_000_000) -> Tuple[np.ndarray, np.ndarray]:
    """Iterate V <- max_a [r + gamma P V] until the sup-norm change drops
    below tol * min(1, (1-gamma)/(2 gamma)); the greedy policy is then
    epsilon-optimal with epsilon = 2 tol / (1 - gamma)."""
    if tol <= 0:
        raise BadParamsError("tol must be positive")
    g = mdp.gamma
    thr = tol * min(1.0, (1.0 - g) / (2.0 * g))
    V = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        Q = mdp.r + g * (mdp.P @ V)
        newV = Q.max(axis=1)
        delta = float(np.abs(newV - V).max())
        V = newV
        if delta < thr:
            break
    Q = mdp.r + g * (mdp.P @ V)
    return V, Q.argmax(axis=1)


def bellman_apply(mdp: TabularMdp, V: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """(B V)(s) = r(s, pi(s)) + gamma * sum_s' P(s'|s, pi(s)) V(s')."""
    idx = np.arange(mdp.n_states)
    return mdp.r[idx, pi] + mdp.gamma * (mdp.P[idx, pi] @ V)


def policy_value(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    """Exact policy evaluation by linear solve."""
    idx = np.arange(mdp.n_states)
    P_pi = mdp.P[idx, pi]
    r_pi = mdp.r[idx, pi]
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, r_pi)


def optimal_policy(mdp: TabularMdp) -> Tuple[np.ndarray, np.ndarray]:
    """Exact optimum via policy iteration (finite termination)."""
    pi = np.zeros(mdp.n_states, dtype=int)
    for _ in range(mdp.n_states * mdp.n_actions * 64 + 16):
        V = policy_value(mdp, pi)
        Q = mdp.r + mdp.gamma * (mdp.P @ V)
        new_pi = Q.argmax(axis=1)
        if np.array_equal(new_pi, pi):
            return V, pi
        pi = new_pi
    return policy_value(mdp, pi), pi


# -- posterior ---------------------------------------------------------------------

@dataclass(frozen=True)
class Observation:
    s: int
    a: int
    r: int        # Bernoulli emission, 0 or 1
    s_next: int

    def validate(self, S: int, A: int) -> None:
        if not (0 <= self.s < S and 0 <= self.a < A and 0 <= self.s_next < S):
            raise BadParamsError(f"observation indices out of range: {self}")
        if self.r not in (0, 1):
            raise BadParamsError(f"reward emission must be 0 or 1, got {self.r}")


@dataclass(frozen=True)
class Posterior:
    alpha: np.ndarray    # (S, A, S) Dirichlet counts
    beta_a: np.ndarray   # (S, A) Beta successes
    beta_b: np.ndarray   # (S, A) Beta failures

    @property
    def n_states(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_actions(self) -> int:
        return self.alpha.shape[1]

    @staticmethod
    def uniform_prior(n_states: int, n_actions: int, pseudo: float = 1.0) -> "Posterior":
        if pseudo <= 0:
            raise BadParamsError("prior counts must be positive")
        return Posterior(
            alpha=np.full((n_states, n_actions, n_states), pseudo),
            beta_a=np.full((n_states, n_actions), pseudo),
            beta_b=np.full((n_states, n_actions), pseudo),
        )

    @staticmethod
    def point_mass(mdp: TabularMdp, strength: float = 1e12) -> "Posterior":
        """Near-degenerate belief centred on mdp (conjugate family limit)."""
        eps = 1e-9
        return Posterior(
            alpha=mdp.P * strength + eps,
            beta_a=mdp.r * strength + eps,
            beta_b=(1.0 - mdp.r) * strength + eps,
        )

    def mean_mdp(self, gamma: float, s0: int = 0) -> TabularMdp:
        P = self.alpha / self.alpha.sum(-1, keepdims=True)
        r = self.beta_a / (self.beta_a + self.beta_b)
        return TabularMdp(P=P, r=r, gamma=gamma, s0=s0)

    def sample_mdp(self, rng: np.random.Generator, gamma: float, s0: int = 0) -> TabularMdp:
        S, A = self.n_states, self.n_actions
        P = np.empty((S, A, S))
        for s in range(S):
            for a in range(A):
                P[s, a] = rng.dirichlet(self.alpha[s, a])
        r = rng.beta(self.beta_a, self.beta_b)
        return TabularMdp(P=P, r=r, gamma=gamma, s0=s0)


def posterior_update(post: Posterior, obs: Observation) -> Posterior:
    """Conjugate count update; pure, returns a new posterior."""
    obs.validate(post.n_states, post.n_actions)
    alpha = post.alpha.copy()
    beta_a = post.beta_a.copy()
    beta_b = post.beta_b.copy()
    alpha[obs.s, obs.a, obs.s_next] += 1.0
    beta_a[obs.s, obs.a] += float(obs.r)
    beta_b[obs.s, obs.a] += 1.0 - float(obs.r)
    return Posterior(alpha, beta_a, beta_b)


def _dirichlet_entropy(alpha: np.ndarray) -> np.ndarray:
    """Differential entropy of Dirichlet rows; alpha has shape (..., K).
    H = ln B(alpha) + (alpha0 - K) psi(alpha0) - sum_j (alpha_j - 1) psi(alpha_j)."""
    a0 = alpha.sum(-1)
    K = alpha.shape[-1]
    return (gammaln(alpha).sum(-1) - gammaln(a0)
            + (a0 - K) * psi(a0)
            - ((alpha - 1.0) * psi(alpha)).sum(-1))


def entropy(post: Posterior) -> float:
    """Total posterior entropy: Dirichlet plus Beta terms over all (s, a)."""
    beta = np.stack([post.beta_a, post.beta_b], axis=-1)
    return float(_dirichlet_entropy(post.alpha).sum() + _dirichlet_entropy(beta).sum())


def information_gain(post_t: Posterior, post_t1: Posterior) -> float:
    """Entropy decrease H_t - H_{t+1} after exactly one observation.
    Identical posteriors degenerate to zero gain."""
    da = post_t1.alpha - post_t.alpha
    dba = post_t1.beta_a - post_t.beta_a
    dbb = post_t1.beta_b - post_t.beta_b
    if not da.any() and not dba.any() and not dbb.any():
        return 0.0
    if not (np.count_nonzero(da) == 1 and float(da.sum()) == 1.0 and float(da.max()) == 1.0):
        raise NotSuccessiveError("transition counts do not differ by one observation")
    if not float(dba.sum() + dbb.sum()) == 1.0 or np.count_nonzero(dba) + np.count_nonzero(dbb) != 1:
        raise NotSuccessiveError("reward counts do not differ by one observation")
    s, a, _ = np.argwhere(da == 1.0)[0]
    if not (dba[s, a] == 1.0 or dbb[s, a] == 1.0):
        raise NotSuccessiveError("transition and reward updates disagree on (s, a)")
    return entropy(post_t) - entropy(post_t1)


# -- offline planning with pessimism ------------------------------------------------

@dataclass
class DatasetCounts:
    trans: np.ndarray     # (S, A, S) observed transitions
    rew_sum: np.ndarray   # (S, A) summed reward emissions
    n_sa: np.ndarray      # (S, A) visit counts


def counts_from_observations(dataset: Sequence[Observation], n_states: int,
                             n_actions: int) -> DatasetCounts:
    trans = np.zeros((n_states, n_actions, n_states))
    rew = np.zeros((n_states, n_actions))
    n = np.zeros((n_states, n_actions))
    for o in dataset:
        o.validate(n_states, n_actions)
        trans[o.s, o.a, o.s_next] += 1.0
        rew[o.s, o.a] += float(o.r)
        n[o.s, o.a] += 1.0
    return DatasetCounts(trans, rew, n)


def pevi(dataset: Union[Sequence[Observation], DatasetCounts], n_states: int,
         n_actions: int, gamma: float, c: float,
         tol: float = 1e-10, max_iter: int = 1_000_000) -> Tuple[np.ndarray, np.ndarray]:
    """Pessimistic value iteration over the empirical model of an offline
    dataset: penalty b(s,a) = c L / sqrt(N(s,a) + 1), Q clipped into [0, L].
    Unvisited cells fall back to a uniform transition row and zero reward."""
    if c < 0:
        raise BadParamsError("pessimism coefficient must be >= 0")
    if not 0.0 < gamma < 1.0:
        raise BadParamsError(f"gamma must be in (0, 1), got {gamma}")
    counts = (dataset if isinstance(dataset, DatasetCounts)
              else counts_from_observations(dataset, n_states, n_actions))
    n_sa = counts.n_sa
    visited = n_sa > 0
    safe_n = np.where(visited, n_sa, 1.0)
    P_hat = np.where(visited[..., None], counts.trans / safe_n[..., None], 1.0 / n_states)
    r_hat = np.where(visited, counts.rew_sum / safe_n, 0.0)
    L = 1.0 / (1.0 - gamma)
    penalty = c * L / np.sqrt(n_sa + 1.0)
    r_pen = r_hat - penalty

    V = np.zeros(n_states)
    Q = np.zeros((n_states, n_actions))
    for _ in range(max_iter):
        Q = np.clip(r_pen + gamma * (P_hat @ V), 0.0, L)
        newV = Q.max(axis=1)
        delta = float(np.abs(newV - V).max())
        V = newV
        if delta < tol:
            break
    return V, Q.argmax(axis=1)


# -- two-loop simulation --------------------------------------------------------------

@dataclass(frozen=True)
class RegretConfig:
    gamma: float = 0.9
    epsilon: float = 1e-3       # planning tolerance target for the inner planner
    delta: float = 0.05         # reported confidence knob; no operational role here
    seed: int = 0
    n_episodes: int = 40        # K
    episode_len: int = 30       # T steps per episode
    pessimism_c: float = 1.0
    posterior_sampling: bool = False
    s0: int = 0

    @property
    def value_bound(self) -> float:
        return 1.0 / (1.0 - self.gamma)

    def validate(self):
        if self.epsilon <= 0:
            raise BadParamsError("epsilon must be positive")
        if self.pessimism_c < 0:
            raise BadParamsError("pessimism coefficient must be >= 0")
        if not 0.0 < self.gamma < 1.0:
            raise BadParamsError("gamma must be in (0, 1)")
        if self.n_episodes < 1 or self.episode_len < 1:
            raise BadParamsError("need n_episodes >= 1 and episode_len >= 1")


@dataclass
class EpisodeRecord:
    k: int
    regret_inst: float
    regret_cum: float
    entropy_end: float
    info_gain: float       # term C proxy: episode entropy drop
    term_a: float          # planning gap under the estimated model
    term_b: float          # V^pi under truth minus under the model
    term_d: float          # negated term_b (single per-episode policy)
    gamma_ratio: float     # mean |value estimation error| / sqrt(step info gain)


@dataclass
class RegretTrace:
    config: RegretConfig
    episodes: List[EpisodeRecord] = field(default_factory=list)
    entropy_series: List[float] = field(default_factory=list)  # prior + every update
    step_info_gains: List[float] = field(default_factory=list)

    def cumulative(self) -> np.ndarray:
        return np.array([e.regret_cum for e in self.episodes])

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(asdict(e)) for e in self.episodes) + "\n"


def simulate_two_loop(prior: Posterior, cfg: RegretConfig,
                      true_mdp: Optional[TabularMdp] = None) -> RegretTrace:
    """Sample an environment from the prior (or take the one given), then plan
    on the posterior-mean model each episode, roll out, and update the belief
    per step. Deterministic for a given seed."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    theta = true_mdp if true_mdp is not None else prior.sample_mdp(rng, cfg.gamma, cfg.s0)
    theta.validate()
    v_star, _ = optimal_policy(theta)

    plan_tol = cfg.epsilon * (1.0 - cfg.gamma) / 2.0
    post = prior
    trace = RegretTrace(config=cfg)
    trace.entropy_series.append(entropy(post))
    cum = 0.0
    for k in range(1, cfg.n_episodes + 1):
        model = (post.sample_mdp(rng, cfg.gamma, cfg.s0) if cfg.posterior_sampling
                 else post.mean_mdp(cfg.gamma, cfg.s0))
        V_hat, pi_k = value_iteration(model, plan_tol)
        v_model_pi = policy_value(model, pi_k)
        v_true_pi = policy_value(theta, pi_k)
        inst = max(0.0, float(v_star[cfg.s0] - v_true_pi[cfg.s0]))
        cum += inst
        term_a = float(V_hat[cfg.s0] - v_model_pi[cfg.s0])
        term_b = float(v_true_pi[cfg.s0] - v_model_pi[cfg.s0])

        h_start = trace.entropy_series[-1]
        ratios = []
        s = cfg.s0
        for _ in range(cfg.episode_len):
            a = int(pi_k[s])
            r = int(rng.random() < theta.r[s, a])
            s_next = int(rng.choice(theta.n_states, p=theta.P[s, a]))
            err = abs(float((model.r[s, a] - theta.r[s, a])
                            + cfg.gamma * ((model.P[s, a] - theta.P[s, a]) @ V_hat)))
            post = posterior_update(post, Observation(s, a, r, s_next))
            h_new = entropy(post)
            step_gain = trace.entropy_series[-1] - h_new
            trace.step_info_gains.append(step_gain)
            trace.entropy_series.append(h_new)
            ratios.append(err / math.sqrt(max(step_gain, 1e-15)))
            s = s_next
        trace.episodes.append(EpisodeRecord(
            k=k, regret_inst=inst, regret_cum=cum,
            entropy_end=trace.entropy_series[-1],
            info_gain=h_start - trace.entropy_series[-1],
            term_a=term_a, term_b=term_b, term_d=-term_b,
            gamma_ratio=float(np.mean(ratios)),
        ))
    return trace


# -- reporting -----------------------------------------------------------------------

def fit_loglog_slope(cumulative: Sequence[float], lo_frac: float = 0.25) -> float:
    """Least-squares slope of log R(n) vs log n over n in [lo_frac*K, K].
    NaN when fewer than two positive points are available."""
    cum = np.asarray(cumulative, dtype=float)
    K = len(cum)
    if K < 2:
        return math.nan
    n = np.arange(1, K + 1)
    lo = max(1, math.ceil(lo_frac * K))
    sel = (n >= lo) & (cum > 0)
    if sel.sum() < 2 or len(set(n[sel])) < 2:
        return math.nan
    slope, _ = np.polyfit(np.log(n[sel]), np.log(cum[sel]), 1)
    return float(slope)


@dataclass
class RegretSummary:
    n_episodes: int
    cumulative_regret: float
    slope: float
    entropy_drop: float
    mean_info_gain: float
    sum_term_a: float
    sum_abs_term_b: float
    mean_gamma_ratio: float
    gamma: float
    epsilon: float
    delta: float      # confidence knob; carried for reporting only
    diagnostics: List[str]

    def to_json(self) -> str:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = None
        return json.dumps(d, indent=2)


def regret_report(trace: RegretTrace) -> RegretSummary:
    if not trace.episodes:
        raise EmptyTraceError("trace has no episodes")
    cum = trace.cumulative()
    slope = fit_loglog_slope(cum)
    diags = []
    if math.isnan(slope):
        diags.append("SlopeUndefined: need at least two positive cumulative points")
    h0 = trace.entropy_series[0]
    h_end = trace.entropy_series[-1]
    gains = np.asarray(trace.step_info_gains) if trace.step_info_gains else np.array([math.nan])
    return RegretSummary(
        n_episodes=len(trace.episodes),
        cumulative_regret=float(cum[-1]),
        slope=slope,
        entropy_drop=float(h0 - h_end),
        mean_info_gain=float(np.mean(gains)),
        sum_term_a=float(sum(e.term_a for e in trace.episodes)),
        sum_abs_term_b=float(sum(abs(e.term_b) for e in trace.episodes)),
        mean_gamma_ratio=float(np.mean([e.gamma_ratio for e in trace.episodes])),
        gamma=trace.config.gamma,
        epsilon=trace.config.epsilon,
        delta=trace.config.delta,
        diagnostics=diags,
    )


def curve_csv(trace: RegretTrace) -> str:
    """episode, cumulative_regret, entropy rows for plotting."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["episode", "cumulative_regret", "entropy"])
    for e in trace.episodes:
        w.writerow([e.k, repr(e.regret_cum), repr(e.entropy_end)])
    return buf.getvalue()


def make_synthetic_trace(cumulative: Sequence[float]) -> RegretTrace:
    """Wrap a given cumulative-regret curve in a trace (fit sanity checks)."""
    cfg = RegretConfig(n_episodes=max(1, len(cumulative)))
    trace = RegretTrace(config=cfg)
    trace.entropy_series.append(0.0)
    prev = 0.0
    for i, c in enumerate(cumulative, start=1):
        trace.episodes.append(EpisodeRecord(
            k=i, regret_inst=float(c) - prev, regret_cum=float(c),
            entropy_end=0.0, info_gain=0.0, term_a=0.0, term_b=0.0,
            term_d=0.0, gamma_ratio=0.0))
        prev = float(c)
        trace.entropy_series.append(0.0)
    return trace
