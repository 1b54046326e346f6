"""One control episode: ground truth, knowledge, beliefs and the per-step protocol.

Per time step ``t`` a controller reads the beliefs ``p^t``, then either
explores up to ``M1`` nodes or removes up to ``M2`` nodes, and finally the
epidemic advances one step and the beliefs absorb the new onsets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import seir
from .belief import BeliefState
from .netgen import ContactNetwork, GraphGenConfig, generate_scale_free
from .seir import EpidemicParams, StepReport

EXPLORE = "explore"
REMOVE = "remove"


class ConstraintViolation(RuntimeError):
    """A controller broke the explore-xor-remove resource constraint."""


@dataclass
class StepLog:
    t: int
    kind: str
    nodes: list[int]
    new_edges: int
    shortage: bool
    delta: int
    onsets: list[int]
    recoveries: list[int]
    ra: float


@dataclass
class EpidemicControlEnv:
    net: ContactNetwork
    params: EpidemicParams
    epi: seir.EpidemicState
    belief: BeliefState
    m1: int
    m2: int
    infected: np.ndarray = field(init=False)
    logs: list[StepLog] = field(default_factory=list)

    def __post_init__(self):
        # I is symptomatic, so the currently-infected set is observable
        self.infected = np.zeros(self.net.n, dtype=bool)

    @classmethod
    def create(
        cls,
        graph: GraphGenConfig | ContactNetwork,
        params: EpidemicParams,
        epi_seed,
        m1: int,
        m2: int,
        p_reveal: float = 0.0,
        reveal_seed=None,
        zero_on_recovery: bool = False,
    ) -> "EpidemicControlEnv":
        if isinstance(graph, ContactNetwork):
            net = graph.copy()
            net.reset_knowledge()
        else:
            net = generate_scale_free(graph)
        if p_reveal > 0:
            net.reveal_fraction(p_reveal, reveal_seed)
        epi = seir.init_epidemic(net, params, epi_seed)
        belief = BeliefState(net.n, params.beta, params.gamma, params.t0, zero_on_recovery)
        return cls(net=net, params=params, epi=epi, belief=belief, m1=m1, m2=m2)

    @property
    def t(self) -> int:
        return self.epi.t

    @property
    def done(self) -> bool:
        return self.epi.t >= self.params.horizon

    def beliefs(self) -> tuple[np.ndarray, np.ndarray]:
        return self.belief.current_beliefs()

    def explore_candidates(self) -> np.ndarray:
        return np.flatnonzero(~self.net.explored & ~self.net.removed)

    def remove_candidates(self) -> np.ndarray:
        return np.flatnonzero(~self.net.removed)

    def validate(self, kind: str, nodes) -> bool:
        """Check the resource constraint; return whether this is a shortage step."""
        nodes = [int(k) for k in nodes]
        if len(set(nodes)) != len(nodes):
            raise ConstraintViolation(f"t={self.t}: duplicate nodes in {kind} action {nodes}")
        if any(not 0 <= k < self.net.n for k in nodes):
            raise ConstraintViolation(f"t={self.t}: node id out of range in {nodes}")
        if kind == EXPLORE:
            budget, pool = self.m1, self.explore_candidates()
        elif kind == REMOVE:
            budget, pool = self.m2, self.remove_candidates()
        else:
            raise ConstraintViolation(f"t={self.t}: unknown action kind {kind!r}")
        if kind == REMOVE and any(self.net.removed[k] for k in nodes):
            raise ConstraintViolation(f"t={self.t}: removing an already removed node in {nodes}")
        if len(nodes) == budget:
            return False
        if len(nodes) < budget and len(nodes) == min(budget, len(pool)):
            return True
        raise ConstraintViolation(
            f"t={self.t}: {kind} action picked {len(nodes)} nodes, budget is {budget}"
        )

    def act(self, kind: str, nodes) -> tuple[int, bool]:
        """Apply one action; returns (newly revealed edges, shortage flag)."""
        shortage = self.validate(kind, nodes)
        new_edges = 0
        if kind == EXPLORE:
            for k in nodes:
                new_edges += self.net.explore_node(k)
        else:
            for k in nodes:
                self.net.remove_node(k)
        self._pending = (kind, [int(k) for k in nodes], new_edges, shortage)
        return new_edges, shortage

    def advance(self) -> StepReport:
        removed_now = self.net.removed.copy()
        t = self.t
        report = seir.step(self.epi, self.net)
        self.infected[report.newly_infected] = True
        self.infected[report.newly_recovered] = False
        self.belief.advance(
            self.net.known_adj,
            removed_now,
            report.newly_infected,
            report.newly_recovered,
            step_index=t,
        )
        kind, nodes, new_edges, shortage = getattr(self, "_pending", ("none", [], 0, False))
        self._pending = ("none", [], 0, False)
        self.logs.append(StepLog(
            t=t,
            kind=kind,
            nodes=nodes,
            new_edges=new_edges,
            shortage=shortage,
            delta=report.delta,
            onsets=report.newly_infected,
            recoveries=report.newly_recovered,
            ra=seir.abnormal_rate(self.epi),
        ))
        return report

    def abnormal_rate(self) -> float:
        return seir.abnormal_rate(self.epi)

    def onsets_at(self, step: int) -> int:
        """Symptom onsets observed during ``step`` (None if not yet simulated)."""
        if step >= len(self.logs):
            return None
        return len(self.logs[step].onsets)
