"""Hierarchical controller: policy selection, explore selection, analytic removal.

The policy module is a DQN over a GCN state embedding; the explore module is
a small DQN scoring candidate nodes one pick at a time; removal maximizes the
closed-form one-step reduction in expected new exposures.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .env import EXPLORE, REMOVE, EpidemicControlEnv
from .neural import (
    Adam,
    ReplayBuffer,
    ValueNet,
    gcn_forward,
    global_max_pool,
    max_pool_backward,
    normalize_adjacency,
    target_sync,
)

log = logging.getLogger(__name__)

# action encoding for the policy head input
ACTION_CODE = {EXPLORE: 0.0, REMOVE: 1.0}
ACTIONS = (EXPLORE, REMOVE)
SCORE_TIE_TOL = 1e-12


# -- features ------------------------------------------------------------------


def node_features(net, p) -> np.ndarray:
    """Per-node (belief, explored, removed, observable degree)."""
    return np.column_stack([
        np.asarray(p, dtype=np.float64),
        net.explored.astype(np.float64),
        net.removed.astype(np.float64),
        net.observable_degree(),
    ])


def explore_task_state(net, infected) -> np.ndarray:
    return np.array([net.explored.mean(), np.asarray(infected, dtype=bool).mean()])


def candidate_actions(net, p, candidates) -> np.ndarray:
    deg = net.observable_degree()
    return np.column_stack([
        np.asarray(p)[candidates],
        net.explored[candidates].astype(np.float64),
        deg[candidates],
    ])


def edge_list(adj) -> np.ndarray:
    iu, ju = np.nonzero(np.triu(adj, 1))
    return np.stack([iu, ju]).astype(np.int32)


def adjacency_from_edges(n: int, edges) -> np.ndarray:
    A = np.zeros((n, n))
    A[edges[0], edges[1]] = 1.0
    A[edges[1], edges[0]] = 1.0
    return A


# -- removal (closed form) -----------------------------------------------------


def removal_scores(G, p, q, beta: float) -> np.ndarray:
    """Expected drop in next-step exposures from removing each node.

    ``f(k) = (1-p_k) q_k [1 - prod_i (1 - G_ki beta p_i)]
           + sum_{i != k} G_ik beta p_k (1-p_i) q_i prod_{j != k} (1 - G_ij beta p_j)``
    """
    G = np.asarray(G, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    n = len(p)
    a = 1.0 - beta * G * p[None, :]
    full = np.prod(a, axis=1)
    own = (1.0 - p) * q * (1.0 - full)
    # leave-one-out row products without division
    ones = np.ones((n, 1))
    prefix = np.cumprod(np.hstack([ones, a[:, :-1]]), axis=1)
    suffix = np.cumprod(np.hstack([ones, a[:, :0:-1]]), axis=1)[:, ::-1]
    loo = prefix * suffix
    weight = (1.0 - p) * q
    spread = beta * p * np.einsum("ik,i,ik->k", G, weight, loo)
    return own + spread


def select_remove_nodes(G, p, q, beta: float, m2: int, removed=None) -> tuple[list[int], bool]:
    """Greedy removal by the closed-form score, updating the graph between picks.

    Returns (picks, degenerate) where ``degenerate`` flags an all-zero score.
    """
    G = np.array(G, dtype=np.float64)
    n = G.shape[0]
    allowed = np.ones(n, dtype=bool) if removed is None else ~np.asarray(removed, dtype=bool)
    picks: list[int] = []
    degenerate = False
    for _ in range(m2):
        if not allowed.any():
            break
        f = removal_scores(G, p, q, beta)
        masked = np.where(allowed, f, -np.inf)
        best = masked.max()
        if best <= 0:
            degenerate = True
        k = int(np.flatnonzero(allowed & (masked >= best - SCORE_TIE_TOL))[0])
        picks.append(k)
        allowed[k] = False
        G[k, :] = 0.0
        G[:, k] = 0.0
    if degenerate:
        log.debug("removal scores vanished; fell back to lowest id")
    return picks, degenerate


def explore_reward(newly_revealed, infected, rho: float) -> float:
    """``rho * (new edges touching an infected node) + (other new edges)``."""
    infected = np.asarray(infected, dtype=bool)
    phi = xi = 0
    for u, v in newly_revealed:
        if infected[u] or infected[v]:
            phi += 1
        else:
            xi += 1
    return rho * phi + xi


def newly_revealed_edges(net, k: int) -> list[tuple[int, int]]:
    fresh = np.flatnonzero(net.true_adj[k] & ~net.known_adj[k])
    return [(int(k), int(j)) for j in fresh]


# -- schedules -----------------------------------------------------------------


@dataclass
class LinearEpsilon:
    start: float = 1.0
    end: float = 0.05
    decay_steps: int = 1000

    def __call__(self, step: int) -> float:
        if self.decay_steps <= 0:
            return self.end
        frac = min(1.0, step / self.decay_steps)
        return self.start + frac * (self.end - self.start)


# -- explore module ------------------------------------------------------------


@dataclass
class ExploreTransition:
    x: np.ndarray          # state(2) + action(3)
    reward: float
    next_state: np.ndarray  # (2,)
    next_actions: np.ndarray  # (c, 3), empty when terminal
    done: bool


class ExploreAgent:
    def __init__(
        self,
        seed: int = 0,
        rho: float = 2.0,
        lr: float = 1e-3,
        discount: float = 0.99,
        capacity: int = 50_000,
        batch_size: int = 32,
        sync_every: int = 200,
        hidden: int = 80,
    ):
        self.seed = seed
        self.rho = rho
        self.discount = discount
        self.batch_size = batch_size
        self.sync_every = sync_every
        self.qnet = ValueNet([5, hidden, 1], seed=seed)
        self.target = self.qnet.copy()
        self.opt = Adam(self.qnet.parameters(), lr=lr)
        self.replay = ReplayBuffer(capacity, seed=seed + 1)
        self.rng = np.random.default_rng(seed + 2)
        self.learn_steps = 0
        self.epsilon = 0.0

    def q_values(self, state, actions, net=None) -> np.ndarray:
        net = net or self.qnet
        if len(actions) == 0:
            return np.zeros(0)
        x = np.hstack([np.tile(state, (len(actions), 1)), actions])
        out, _ = net.forward(x)
        return out[:, 0]

    def pick(self, state, actions, greedy: bool) -> int:
        """Index into ``actions`` (argmax, first on ties; epsilon-greedy when training)."""
        if not greedy and self.rng.random() < self.epsilon:
            return int(self.rng.integers(len(actions)))
        q = self.q_values(state, actions)
        # identical rows can differ in the last bit after a batched matmul
        return int(np.flatnonzero(q >= q.max() - SCORE_TIE_TOL)[0])

    def learn(self) -> float | None:
        if len(self.replay) < self.batch_size:
            return None
        batch = self.replay.sample(self.batch_size)
        X = np.stack([b.x for b in batch])
        targets = np.empty(len(batch))
        for i, b in enumerate(batch):
            nxt = 0.0
            if not b.done and len(b.next_actions):
                nxt = float(self.q_values(b.next_state, b.next_actions, self.target).max())
            targets[i] = b.reward + self.discount * nxt
        out, cache = self.qnet.forward(X)
        err = out[:, 0] - targets
        loss = float(np.mean(err ** 2))
        grad_out = (2.0 / len(batch)) * err[:, None]
        grads, _ = self.qnet.backward(grad_out, cache)
        self.opt.step(grads)
        self.learn_steps += 1
        if self.learn_steps % self.sync_every == 0:
            target_sync(self.qnet, self.target)
        return loss


def select_explore_nodes(
    agent: ExploreAgent, net, p, infected, m1: int, greedy: bool = True, record: list | None = None
) -> tuple[list[int], bool]:
    """Pick up to ``m1`` nodes one at a time, revealing each pick on a scratch copy.

    When ``record`` is a list, one :class:`ExploreTransition` per pick is
    appended to it. Returns (picks, shortage).
    """
    scratch = net.copy()
    picks: list[int] = []
    for _ in range(m1):
        cands = np.flatnonzero(~scratch.explored & ~scratch.removed)
        if cands.size == 0:
            break
        state = explore_task_state(scratch, infected)
        acts = candidate_actions(scratch, p, cands)
        j = agent.pick(state, acts, greedy)
        k = int(cands[j])
        fresh = newly_revealed_edges(scratch, k)
        scratch.explore_node(k)
        picks.append(k)
        if record is not None:
            reward = explore_reward(fresh, infected, agent.rho)
            nxt_c = np.flatnonzero(~scratch.explored & ~scratch.removed)
            nxt_state = explore_task_state(scratch, infected)
            record.append(ExploreTransition(
                x=np.concatenate([state, acts[j]]),
                reward=reward,
                next_state=nxt_state,
                next_actions=candidate_actions(scratch, p, nxt_c),
                done=nxt_c.size == 0,
            ))
    return picks, len(picks) < m1


# -- policy module -------------------------------------------------------------


@dataclass
class PolicyTransition:
    features: np.ndarray     # (n, 4)
    edges: np.ndarray        # (2, E) active observable edges
    action: float
    ret: float               # discounted n-step return
    next_features: np.ndarray | None
    next_edges: np.ndarray | None
    done: bool
    bootstrap: float         # discount ** steps_used


class PolicyAgent:
    def __init__(
        self,
        seed: int = 0,
        lr: float = 1e-3,
        discount: float = 0.99,
        n_step: int = 3,
        capacity: int = 50_000,
        batch_size: int = 32,
        sync_every: int = 200,
        gcn_dims=(4, 100, 20),
        head_dims=(21, 80, 60, 1),
    ):
        if gcn_dims[-1] + 1 != head_dims[0]:
            raise ValueError("head input must be the embedding plus one action unit")
        self.seed = seed
        self.discount = discount
        self.n_step = n_step
        self.batch_size = batch_size
        self.sync_every = sync_every
        self.gcn = ValueNet(list(gcn_dims), out_activation="relu", bias=False, propagate=True, seed=seed)
        self.qnet = ValueNet(list(head_dims), seed=seed + 1)
        self.gcn_target = self.gcn.copy()
        self.q_target = self.qnet.copy()
        self.opt = Adam(self.gcn.parameters() + self.qnet.parameters(), lr=lr)
        self.replay = ReplayBuffer(capacity, seed=seed + 2)
        self.rng = np.random.default_rng(seed + 3)
        self.learn_steps = 0
        self.epsilon = 0.0

    def embed(self, features, A_norm, target: bool = False) -> np.ndarray:
        gcn = self.gcn_target if target else self.gcn
        H, _ = gcn_forward(features, A_norm, gcn)
        return global_max_pool(H)[0]

    def q_values(self, features, A_norm, target: bool = False) -> np.ndarray:
        """Q for (explore, remove) given one state; batched over a leading axis too."""
        s = self.embed(features, A_norm, target)
        qnet = self.q_target if target else self.qnet
        lead = s.shape[:-1]
        xs = [np.concatenate([s, np.full(lead + (1,), ACTION_CODE[a])], axis=-1) for a in ACTIONS]
        return np.stack([qnet.forward(x)[0][..., 0] for x in xs], axis=-1)

    def choose(self, features, A_norm, greedy: bool = True) -> str:
        if not greedy and self.rng.random() < self.epsilon:
            return ACTIONS[int(self.rng.integers(2))]
        q = self.q_values(features, A_norm)
        return REMOVE if q[1] > q[0] else EXPLORE

    def loss_and_grads(self, features, A_norm, actions, targets):
        """Squared TD error on a batch and its gradient for gcn + head params."""
        H, gcache = self.gcn.forward(features, A_norm)
        s, idx = global_max_pool(H)
        x = np.concatenate([s, np.asarray(actions, dtype=np.float64)[:, None]], axis=1)
        out, qcache = self.qnet.forward(x)
        err = out[:, 0] - targets
        loss = float(np.mean(err ** 2))
        g_out = (2.0 / len(targets)) * err[:, None]
        q_grads, g_x = self.qnet.backward(g_out, qcache)
        g_H = max_pool_backward(g_x[:, :-1], idx, H.shape[-2])
        gcn_grads, _ = self.gcn.backward(g_H, gcache, A_norm)
        return loss, gcn_grads + q_grads

    def learn(self) -> float | None:
        if len(self.replay) < self.batch_size:
            return None
        batch = self.replay.sample(self.batch_size)
        n = batch[0].features.shape[0]
        F = np.stack([b.features for b in batch])
        A = normalize_adjacency(np.stack([adjacency_from_edges(n, b.edges) for b in batch]))
        targets = np.array([b.ret for b in batch])
        live = [i for i, b in enumerate(batch) if not b.done]
        if live:
            Fn = np.stack([batch[i].next_features for i in live])
            An = normalize_adjacency(np.stack([adjacency_from_edges(n, batch[i].next_edges) for i in live]))
            qn = self.q_values(Fn, An, target=True).max(axis=1)
            for j, i in enumerate(live):
                targets[i] += batch[i].bootstrap * qn[j]
        actions = [b.action for b in batch]
        loss, grads = self.loss_and_grads(F, A, actions, targets)
        self.opt.step(grads)
        self.learn_steps += 1
        if self.learn_steps % self.sync_every == 0:
            target_sync(self.gcn, self.gcn_target)
            target_sync(self.qnet, self.q_target)
        return loss


def policy_state(env: EpidemicControlEnv):
    p, _ = env.beliefs()
    feats = node_features(env.net, p)
    adj = env.net.active_observable_adjacency()
    return feats, adj


def select_policy(agent: PolicyAgent, env: EpidemicControlEnv, greedy: bool = True) -> str:
    feats, adj = policy_state(env)
    return agent.choose(feats, normalize_adjacency(adj), greedy)


def policy_reward_stream(onsets_per_step, t0: int, horizon: int):
    """Per-step rewards ``-delta^t`` read off onsets ``t0`` steps later.

    Returns (rewards, truncated) where steps whose onsets fall beyond the
    horizon get reward 0 and ``truncated=True``.
    """
    rewards, truncated = [], []
    for t in range(horizon):
        k = t + t0
        if k < horizon and k < len(onsets_per_step):
            rewards.append(-float(onsets_per_step[k]))
            truncated.append(False)
        else:
            rewards.append(0.0)
            truncated.append(True)
    return rewards, truncated


def n_step_return(rewards, start: int, n: int, discount: float) -> tuple[float, int]:
    """Discounted sum of up to ``n`` rewards from ``start``; returns (value, steps used)."""
    end = min(start + n, len(rewards))
    value = sum(discount ** (i - start) * rewards[i] for i in range(start, end))
    return value, end - start


# -- training ------------------------------------------------------------------


@dataclass
class EnvConfig:
    """What a training run needs to spin up episodes."""

    n: int = 100
    avg_degree: float = 4.0
    beta: float = 0.012
    gamma: float = 0.02
    t0: int = 5
    horizon: int = 50
    n_seeds: int = 2
    m1: int = 4
    m2: int = 1

    def make_env(self, graph_seed, epi_seed) -> EpidemicControlEnv:
        from .netgen import GraphGenConfig
        from .seir import EpidemicParams

        params = EpidemicParams(self.beta, self.gamma, self.t0, self.horizon, self.n_seeds)
        return EpidemicControlEnv.create(
            GraphGenConfig(self.n, self.avg_degree, graph_seed), params, epi_seed, self.m1, self.m2
        )


def episode_seeds(master: int, episode: int) -> tuple[int, int, int]:
    """(graph, epidemic, controller) seeds for one training episode."""
    ss = np.random.SeedSequence([int(master), int(episode), 0x7A1])
    g, e, c = ss.generate_state(3, dtype=np.uint64)
    return int(g), int(e), int(c)


def theorem1_remove(env: EpidemicControlEnv) -> list[int]:
    p, q = env.beliefs()
    picks, _ = select_remove_nodes(
        env.net.active_observable_adjacency(), p, q, env.params.beta, env.m2, env.net.removed
    )
    return picks


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)
    episode_returns: list[float] = field(default_factory=list)
    episode_ra: list[float] = field(default_factory=list)


def train_explore(
    cfg: EnvConfig,
    agent: ExploreAgent,
    episodes: int,
    seed: int = 0,
    explore_prob: float = 0.5,
    eps_start: float = 1.0,
    eps_end: float = 0.05,
    eps_fraction: float = 0.6,
) -> TrainLog:
    """One-step TD on explore picks while a coin decides explore vs. remove."""
    out = TrainLog()
    expected_picks = episodes * cfg.horizon * explore_prob * cfg.m1
    schedule = LinearEpsilon(eps_start, eps_end, int(eps_fraction * expected_picks))
    picks_done = 0
    for ep in range(episodes):
        g_seed, e_seed, c_seed = episode_seeds(seed, ep)
        env = cfg.make_env(g_seed, e_seed)
        coin = np.random.default_rng(c_seed)
        total = 0.0
        while not env.done:
            if coin.random() < explore_prob:
                p, _ = env.beliefs()
                record: list[ExploreTransition] = []
                agent.epsilon = schedule(picks_done)
                nodes, _ = select_explore_nodes(agent, env.net, p, env.infected, cfg.m1, greedy=False, record=record)
                for tr in record:
                    agent.replay.add(tr)
                    total += tr.reward
                    loss = agent.learn()
                    if loss is not None:
                        if not np.isfinite(loss):
                            raise FloatingPointError("explore training diverged")
                        out.losses.append(loss)
                picks_done += len(record)
                env.act(EXPLORE, nodes)
            else:
                env.act(REMOVE, theorem1_remove(env))
            env.advance()
        out.episode_returns.append(total)
        out.episode_ra.append(env.abnormal_rate())
    agent.epsilon = 0.0
    return out


def _policy_transition(states, kinds, rewards, tau, n, discount, horizon):
    ret, used = n_step_return(rewards, tau, n, discount)
    nxt = tau + used
    done = nxt >= horizon
    feats, edges = states[tau]
    nf, ne = (None, None) if done else states[nxt]
    return PolicyTransition(
        features=feats,
        edges=edges,
        action=ACTION_CODE[kinds[tau]],
        ret=ret,
        next_features=nf,
        next_edges=ne,
        done=done,
        bootstrap=discount ** used,
    )


def train_policy(
    cfg: EnvConfig,
    explorer: ExploreAgent,
    agent: PolicyAgent,
    episodes: int,
    seed: int = 0,
    eps_start: float = 1.0,
    eps_end: float = 0.05,
    eps_fraction: float = 0.6,
    learn_every: int = 1,
) -> TrainLog:
    """n-step DQN on the delayed ``-delta`` reward with the explore module frozen."""
    out = TrainLog()
    schedule = LinearEpsilon(eps_start, eps_end, int(eps_fraction * episodes * cfg.horizon))
    n, T, t0 = agent.n_step, cfg.horizon, cfg.t0
    steps = 0
    for ep in range(episodes):
        g_seed, e_seed, _ = episode_seeds(seed, ep)
        env = cfg.make_env(g_seed, e_seed)
        states, kinds, onsets = [], [], []
        pushed = 0
        while not env.done:
            feats, adj = policy_state(env)
            agent.epsilon = schedule(steps)
            kind = agent.choose(feats, normalize_adjacency(adj), greedy=False)
            states.append((feats, edge_list(adj)))
            kinds.append(kind)
            if kind == EXPLORE:
                p, _ = env.beliefs()
                nodes, _ = select_explore_nodes(explorer, env.net, p, env.infected, cfg.m1, greedy=True)
            else:
                nodes = theorem1_remove(env)
            env.act(kind, nodes)
            report = env.advance()
            onsets.append(len(report.newly_infected))
            steps += 1
            # transitions whose n rewards are all observed and whose next state exists
            t = env.t - 1
            while pushed + n - 1 + t0 <= t and pushed + n <= t:
                rewards, _ = policy_reward_stream(onsets, t0, T)
                agent.replay.add(_policy_transition(states, kinds, rewards, pushed, n, agent.discount, T))
                pushed += 1
            if steps % learn_every == 0:
                loss = agent.learn()
                if loss is not None:
                    if not np.isfinite(loss):
                        raise FloatingPointError("policy training diverged")
                    out.losses.append(loss)
        rewards, _ = policy_reward_stream(onsets, t0, T)
        while pushed < len(states):
            agent.replay.add(_policy_transition(states, kinds, rewards, pushed, n, agent.discount, T))
            pushed += 1
        out.episode_returns.append(float(sum(rewards)))
        out.episode_ra.append(env.abnormal_rate())
    agent.epsilon = 0.0
    return out


def save_explore_agent(agent: ExploreAgent, path, **meta):
    from .neural import save_checkpoint

    info = {"module": "explore", "seed": agent.seed, "rho": agent.rho, "discount": agent.discount,
            "batch_size": agent.batch_size, "sync_every": agent.sync_every,
            "learn_steps": agent.learn_steps}
    info.update(meta)
    return save_checkpoint(path, {"qnet": agent.qnet}, info)


def save_policy_agent(agent: PolicyAgent, path, **meta):
    from .neural import save_checkpoint

    info = {"module": "policy", "seed": agent.seed, "discount": agent.discount, "n_step": agent.n_step,
            "batch_size": agent.batch_size, "sync_every": agent.sync_every,
            "learn_steps": agent.learn_steps, "action_code": ACTION_CODE}
    info.update(meta)
    return save_checkpoint(path, {"gcn": agent.gcn, "qnet": agent.qnet}, info)
