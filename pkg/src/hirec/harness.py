"""Episode loop, controllers, both comparison setups, records and summaries."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines
from .agents import (
    ExploreAgent,
    PolicyAgent,
    save_explore_agent,
    save_policy_agent,
    select_explore_nodes,
    select_policy,
    select_remove_nodes,
    train_explore,
    train_policy,
)
from .config import ExperimentConfig
from .env import EXPLORE, REMOVE, EpidemicControlEnv
from .netgen import GraphGenConfig
from .neural import load_checkpoint

log = logging.getLogger(__name__)


class CheckpointError(RuntimeError):
    pass


# -- seeds ---------------------------------------------------------------------


def replication_seeds(master: int, rep: int) -> dict[str, int]:
    """Split the master seed into independent per-replication streams.

    ``SeedSequence([master, rep])`` is expanded into four 64-bit words used,
    in order, for the graph, the epidemic, the edge reveal and the controller.
    Any replication can be reproduced from ``(master, rep)`` alone.
    """
    words = np.random.SeedSequence([int(master), int(rep)]).generate_state(4, dtype=np.uint64)
    g, e, r, c = (int(w) for w in words)
    return {"graph": g, "epidemic": e, "reveal": r, "controller": c}


# -- controllers ---------------------------------------------------------------


def remove_with(env: EpidemicControlEnv, remover: str, rng=None) -> list[int]:
    """Pick ``M2`` nodes with the named removal rule on the controller's knowledge."""
    m = min(env.m2, int((~env.net.removed).sum()))
    if m == 0:
        return []
    if remover == "theorem1":
        p, q = env.beliefs()
        picks, _ = select_remove_nodes(
            env.net.active_observable_adjacency(), p, q, env.params.beta, m, env.net.removed
        )
        return picks
    if remover == "random":
        return [int(k) for k in rng.choice(env.remove_candidates(), size=m, replace=False)]
    select = baselines.SELECTORS[remover]
    return select(env.net.known_adj.astype(np.float64), env.net.removed, m)


def explore_randomly(env: EpidemicControlEnv, rng) -> list[int]:
    cands = env.explore_candidates()
    take = min(env.m1, len(cands))
    return [int(k) for k in rng.choice(cands, size=take, replace=False)]


class Controller:
    name = "controller"

    def reset(self, seed) -> None:
        self.rng = np.random.default_rng(seed)

    def decide(self, env: EpidemicControlEnv) -> tuple[str, list[int]]:
        raise NotImplementedError


class HirecController(Controller):
    """Trained policy + explore modules with a pluggable removal rule."""

    def __init__(self, policy: PolicyAgent, explorer: ExploreAgent, remover: str = "theorem1"):
        self.policy = policy
        self.explorer = explorer
        self.remover = remover
        self.name = "hirec" if remover == "theorem1" else f"hirec+{remover}"

    def decide(self, env):
        kind = select_policy(self.policy, env, greedy=True)
        if kind == EXPLORE and len(env.explore_candidates()):
            p, _ = env.beliefs()
            nodes, _ = select_explore_nodes(self.explorer, env.net, p, env.infected, env.m1, greedy=True)
            return EXPLORE, nodes
        return REMOVE, remove_with(env, self.remover, self.rng)


class ScriptedController(Controller):
    """Fixed schedules.

    ``random``: fair coin between explore and remove, uniformly random nodes.
    ``coin``: fair coin, but nodes picked by the explore module / removal rule.
    ``always_remove`` / ``always_explore``: constant choice with the modules.
    """

    def __init__(self, mode: str, explorer: ExploreAgent | None = None, remover: str = "theorem1"):
        self.mode = mode
        self.explorer = explorer
        self.remover = remover
        self.name = mode

    def _explore(self, env):
        if self.explorer is None or self.mode == "random":
            return explore_randomly(env, self.rng)
        p, _ = env.beliefs()
        return select_explore_nodes(self.explorer, env.net, p, env.infected, env.m1, greedy=True)[0]

    def decide(self, env):
        if self.mode == "always_remove":
            kind = REMOVE
        elif self.mode == "always_explore":
            kind = EXPLORE
        else:
            kind = EXPLORE if self.rng.random() < 0.5 else REMOVE
        if kind == EXPLORE and len(env.explore_candidates()):
            return EXPLORE, self._explore(env)
        if kind == EXPLORE:
            return EXPLORE, []
        remover = "random" if self.mode == "random" else self.remover
        return REMOVE, remove_with(env, remover, self.rng)


class BaselineController(Controller):
    """Setup-2 baseline: remove ``M2`` nodes every step using revealed edges only."""

    def __init__(self, name: str):
        if name not in baselines.SELECTORS:
            raise ValueError(f"unknown baseline {name!r}")
        self.name = name

    def decide(self, env):
        if not env.net.known_adj.any():
            log.debug("baseline %s has no edge knowledge; picks fall back to id order", self.name)
        return REMOVE, remove_with(env, self.name, self.rng)


def load_agents(explore_path, policy_path) -> tuple[ExploreAgent, PolicyAgent | None]:
    """Load the explore (and, if a path is given, policy) modules for greedy use."""
    try:
        ex = load_checkpoint(explore_path)
        po = load_checkpoint(policy_path) if policy_path is not None else None
        if ex.meta.get("module") != "explore" or (po is not None and po.meta.get("module") != "policy"):
            raise ValueError("checkpoint holds the wrong module")
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"cannot load checkpoint: {exc}") from exc
    explorer = ExploreAgent(seed=int(ex.meta.get("seed", 0)), rho=float(ex.meta.get("rho", 2.0)))
    explorer.qnet = ex.nets["qnet"]
    explorer.target = explorer.qnet.copy()
    if po is None:
        return explorer, None
    policy = PolicyAgent(seed=int(po.meta.get("seed", 0)))
    policy.gcn = po.nets["gcn"]
    policy.qnet = po.nets["qnet"]
    policy.gcn_target = policy.gcn.copy()
    policy.q_target = policy.qnet.copy()
    return explorer, policy


def build_controller(cfg: ExperimentConfig, name: str | None = None, remover: str | None = None) -> Controller:
    name = name or cfg.controller
    remover = remover or cfg.remover
    if name == "hirec":
        explorer, policy = load_agents(cfg.explore_checkpoint, cfg.policy_checkpoint)
        return HirecController(policy, explorer, remover)
    if name in ("random", "always_remove", "always_explore", "coin"):
        explorer = None
        if name != "random" and Path(cfg.explore_checkpoint).with_suffix(".json").exists():
            explorer, _ = load_agents(cfg.explore_checkpoint, None)
        return ScriptedController(name, explorer, remover)
    return BaselineController(name)


# -- training ------------------------------------------------------------------


def train_explore_module(cfg: ExperimentConfig, episodes: int | None = None, save: bool = True):
    """Train the explore module from ``cfg.training`` and optionally checkpoint it."""
    tc = cfg.training
    episodes = tc.explore_episodes if episodes is None else episodes
    agent = ExploreAgent(seed=tc.seed, rho=tc.rho, lr=tc.lr, discount=tc.discount,
                         capacity=tc.capacity, batch_size=tc.batch_size, sync_every=tc.sync_every)
    start = time.perf_counter()
    train_log = train_explore(cfg.env_config(), agent, episodes, seed=tc.seed, explore_prob=tc.explore_prob,
                              eps_start=tc.eps_start, eps_end=tc.eps_end, eps_fraction=tc.eps_fraction)
    elapsed = time.perf_counter() - start
    if save:
        save_explore_agent(agent, cfg.explore_checkpoint, episodes=episodes, train_seed=tc.seed)
    log.info("explore module: %d episodes in %.1fs", episodes, elapsed)
    return agent, train_log, elapsed


def train_policy_module(cfg: ExperimentConfig, explorer: ExploreAgent | None = None,
                        episodes: int | None = None, save: bool = True):
    """Train the policy module on top of a frozen explore module."""
    tc = cfg.training
    episodes = tc.policy_episodes if episodes is None else episodes
    if explorer is None:
        explorer, _ = load_agents(cfg.explore_checkpoint, None)
    # distinct streams from the explore run so the two modules see different episodes
    agent = PolicyAgent(seed=tc.seed + 1, lr=tc.lr, discount=tc.discount, n_step=tc.n_step,
                        capacity=tc.capacity, batch_size=tc.batch_size, sync_every=tc.sync_every)
    start = time.perf_counter()
    train_log = train_policy(cfg.env_config(), explorer, agent, episodes, seed=tc.seed + 1,
                             eps_start=tc.eps_start, eps_end=tc.eps_end, eps_fraction=tc.eps_fraction,
                             learn_every=tc.learn_every)
    elapsed = time.perf_counter() - start
    if save:
        save_policy_agent(agent, cfg.policy_checkpoint, episodes=episodes, train_seed=tc.seed + 1)
    log.info("policy module: %d episodes in %.1fs", episodes, elapsed)
    return agent, train_log, elapsed


# -- episodes ------------------------------------------------------------------


@dataclass
class EpisodeRecord:
    header: dict
    steps: list[dict] = field(default_factory=list)

    @property
    def final_ra(self) -> float:
        return self.header["final_ra"]

    def to_jsonl(self) -> str:
        lines = [json.dumps({"header": self.header}, sort_keys=True)]
        lines += [json.dumps(s, sort_keys=True) for s in self.steps]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def load(cls, path) -> "EpisodeRecord":
        rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        if not rows or "header" not in rows[0]:
            raise ValueError(f"{path}: first line must hold the episode header")
        return cls(rows[0]["header"], rows[1:])


def make_env(cfg: ExperimentConfig, seeds: dict, m1=None, m2=None, p_reveal=None) -> EpidemicControlEnv:
    return EpidemicControlEnv.create(
        GraphGenConfig(cfg.n, cfg.avg_degree, seeds["graph"]),
        cfg.params,
        seeds["epidemic"],
        m1 or cfg.m1,
        m2 or cfg.m2,
        p_reveal=p_reveal or 0.0,
        reveal_seed=seeds["reveal"],
    )


def _finish_record(env: EpidemicControlEnv, header: dict) -> EpisodeRecord:
    t0, T = env.params.t0, env.params.horizon
    steps = []
    for log_row in env.logs:
        later = log_row.t + t0
        delta = len(env.logs[later].onsets) if later < T else None
        steps.append({
            "t": log_row.t,
            "kind": log_row.kind,
            "nodes": log_row.nodes,
            "new_edges": log_row.new_edges,
            "shortage": log_row.shortage,
            "delta": delta,
            "delta_true": log_row.delta,
            "onsets": log_row.onsets,
            "ra": log_row.ra,
        })
    header = dict(header, final_ra=env.abnormal_rate(), truncated_steps=min(t0, T))
    return EpisodeRecord(header, steps)


def run_episode(
    cfg: ExperimentConfig,
    controller: Controller,
    seeds: dict,
    m1=None,
    m2=None,
    p_reveal=None,
) -> EpisodeRecord:
    """One episode under the explore-xor-remove constraint."""
    env = make_env(cfg, seeds, m1, m2, p_reveal)
    controller.reset(seeds["controller"])
    while not env.done:
        kind, nodes = controller.decide(env)
        env.act(kind, nodes)  # raises ConstraintViolation
        env.advance()
    header = {
        "n": cfg.n, "avg_degree": cfg.avg_degree, "beta": cfg.beta, "gamma": cfg.gamma,
        "t0": cfg.t0, "horizon": cfg.horizon, "n_seeds": cfg.n_seeds,
        "m1": env.m1, "m2": env.m2, "p_reveal": p_reveal or 0.0,
        "controller": controller.name, "seeds": seeds,
    }
    return _finish_record(env, header)


def replay(record: EpisodeRecord) -> EpisodeRecord:
    """Re-run the recorded action sequence on freshly built ground truth."""
    h = record.header
    cfg = ExperimentConfig(n=h["n"], avg_degree=h["avg_degree"], beta=h["beta"], gamma=h["gamma"],
                           t0=h["t0"], horizon=h["horizon"], n_seeds=h["n_seeds"],
                           m1=h["m1"], m2=h["m2"])
    env = make_env(cfg, h["seeds"], h["m1"], h["m2"], h["p_reveal"])
    for row in record.steps:
        env.act(row["kind"], row["nodes"])
        env.advance()
    return _finish_record(env, {k: v for k, v in h.items() if k not in ("final_ra", "truncated_steps")})


# -- summaries -----------------------------------------------------------------


@dataclass
class RunSummary:
    label: dict
    ra: list[float]
    actions: dict
    wall_clock: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.ra))

    @property
    def std(self) -> float:
        return float(np.std(self.ra, ddof=1)) if len(self.ra) > 1 else 0.0

    @property
    def ci95(self) -> float:
        return 1.96 * self.std / math.sqrt(len(self.ra))

    def row(self) -> dict:
        return dict(self.label, mean_ra=self.mean, std_ra=self.std, ci95=self.ci95,
                    replications=len(self.ra), explore_steps=self.actions.get(EXPLORE, 0),
                    remove_steps=self.actions.get(REMOVE, 0), wall_clock=self.wall_clock)


def _one(args):
    cfg, controller, rep, m1, m2, p_reveal = args
    rec = run_episode(cfg, controller, replication_seeds(cfg.master_seed, rep), m1, m2, p_reveal)
    kinds = [s["kind"] for s in rec.steps]
    return rep, rec.final_ra, {EXPLORE: kinds.count(EXPLORE), REMOVE: kinds.count(REMOVE)}


def evaluate(cfg, controller, label, m1=None, m2=None, p_reveal=None, replications=None,
             jobs: int = 1, per_rep: list | None = None) -> RunSummary:
    """Run paired replications (shared seeds across controllers) and summarize."""
    reps = replications or cfg.replications
    start = time.perf_counter()
    tasks = [(cfg, controller, r, m1, m2, p_reveal) for r in range(reps)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one, tasks))
    else:
        results = [_one(t) for t in tasks]
    results.sort(key=lambda r: r[0])
    actions = {EXPLORE: 0, REMOVE: 0}
    for _, _, a in results:
        actions[EXPLORE] += a[EXPLORE]
        actions[REMOVE] += a[REMOVE]
    ra = [r[1] for r in results]
    if per_rep is not None:
        per_rep.extend(dict(label, replication=r, ra=v) for r, v, _ in results)
    return RunSummary(label, ra, actions, time.perf_counter() - start)


def run_setup1(cfg: ExperimentConfig, jobs: int = 1, per_rep: list | None = None) -> list[RunSummary]:
    """Swap only the removal rule inside the trained hierarchy, for each (M1, M2)."""
    explorer, policy = load_agents(cfg.explore_checkpoint, cfg.policy_checkpoint)
    out = []
    for m1, m2 in cfg.m_pairs:
        for variant in cfg.variants:
            ctrl = HirecController(policy, explorer, variant)
            label = {"setup": 1, "method": variant, "M1": m1, "M2": m2, "P_r": 0.0}
            out.append(evaluate(cfg, ctrl, label, m1, m2, None, jobs=jobs, per_rep=per_rep))
            log.info("setup1 M1=%d M2=%d %s: %.4f", m1, m2, variant, out[-1].mean)
    return out


def run_setup2(cfg: ExperimentConfig, jobs: int = 1, per_rep: list | None = None) -> list[RunSummary]:
    """HIREC from zero knowledge vs. baselines granted a share of the edges."""
    explorer, policy = load_agents(cfg.explore_checkpoint, cfg.policy_checkpoint)
    out = []
    for m1 in cfg.m1_values:
        ctrl = HirecController(policy, explorer, "theorem1")
        label = {"setup": 2, "method": "hirec", "M1": m1, "M2": 1, "P_r": 0.0}
        out.append(evaluate(cfg, ctrl, label, m1, 1, None, jobs=jobs, per_rep=per_rep))
    for p_r in cfg.p_values:
        for name in cfg.baselines:
            label = {"setup": 2, "method": name, "M1": 0, "M2": 1, "P_r": p_r}
            out.append(evaluate(cfg, BaselineController(name), label, cfg.m1, 1, p_r,
                                jobs=jobs, per_rep=per_rep))
            log.info("setup2 P_r=%.2f %s: %.4f", p_r, name, out[-1].mean)
    return out


SUMMARY_COLUMNS = ["setup", "method", "M1", "M2", "P_r", "mean_ra", "std_ra", "ci95",
                   "replications", "explore_steps", "remove_steps", "wall_clock"]
REPLICATION_COLUMNS = ["setup", "method", "M1", "M2", "P_r", "replication", "ra"]


def write_csv(path, rows, columns) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def summarize_replications(path) -> list[dict]:
    """Recompute mean / std / CI per group from a per-replication CSV."""
    groups: dict[tuple, list[float]] = {}
    with Path(path).open() as fh:
        for row in csv.DictReader(fh):
            key = (row["setup"], row["method"], row["M1"], row["M2"], row["P_r"])
            groups.setdefault(key, []).append(float(row["ra"]))
    out = []
    for (setup, method, m1, m2, p_r), vals in groups.items():
        sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        out.append({"setup": int(setup), "method": method, "M1": int(m1), "M2": int(m2),
                    "P_r": float(p_r), "mean_ra": float(np.mean(vals)), "std_ra": sd,
                    "ci95": 1.96 * sd / math.sqrt(len(vals)), "replications": len(vals)})
    return out
