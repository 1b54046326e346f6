"""Discrete-time SEIR dynamics on a contact network with quarantine.

Time convention: ``step`` runs the transitions of step ``t`` (the current
value of ``state.t``) and then advances ``t``. A node exposed during step
``e`` has ``exposed_at == e`` and shows symptoms during step ``e + t0``.
Initial seeds carry ``exposed_at == 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .netgen import ContactNetwork


class Health(IntEnum):
    S = 0
    E = 1
    I = 2  # noqa: E741
    R = 3


@dataclass(frozen=True)
class EpidemicParams:
    beta: float = 0.012
    gamma: float = 0.02
    t0: int = 5
    horizon: int = 50
    n_seeds: int = 2

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.t0 < 1:
            raise ValueError(f"t0 must be >= 1, got {self.t0}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.n_seeds < 0:
            raise ValueError(f"n_seeds must be >= 0, got {self.n_seeds}")


@dataclass
class StepReport:
    t: int
    delta: int
    newly_exposed: list[int]
    newly_infected: list[int]
    newly_recovered: list[int]


@dataclass
class EpidemicState:
    health: np.ndarray
    exposed_at: np.ndarray  # -1 when never exposed
    params: EpidemicParams
    rng: np.random.Generator
    t: int = 0
    onset_log: list[tuple[int, int]] = field(default_factory=list)
    last_onsets: list[int] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.health)

    def counts(self) -> dict[str, int]:
        return {h.name: int(np.count_nonzero(self.health == h)) for h in Health}

    def abnormal_mask(self) -> np.ndarray:
        return (self.health == Health.E) | (self.health == Health.I)


def init_epidemic(net: ContactNetwork, params: EpidemicParams, seed) -> EpidemicState:
    if params.n_seeds >= net.n:
        raise ValueError(f"n_seeds={params.n_seeds} must be below n={net.n}")
    rng = np.random.default_rng(seed)
    health = np.full(net.n, Health.S, dtype=np.int8)
    exposed_at = np.full(net.n, -1, dtype=np.int64)
    seeds = rng.choice(net.n, size=params.n_seeds, replace=False)
    health[seeds] = Health.E
    exposed_at[seeds] = 0
    return EpidemicState(health=health, exposed_at=exposed_at, params=params, rng=rng)


def step(state: EpidemicState, net: ContactNetwork) -> StepReport:
    """Advance one synchronous step: promotion, infection, recovery."""
    p = state.params
    if state.t >= p.horizon:
        raise RuntimeError(f"cannot step past horizon T={p.horizon}")
    t = state.t
    health = state.health

    # (1) incubation complete
    promote = (health == Health.E) & (t - state.exposed_at == p.t0)
    onsets = np.flatnonzero(promote)
    health[onsets] = Health.I
    state.onset_log.extend((int(i), t) for i in onsets)

    # (2) infection, from compartments at the start of this step
    active = ~net.removed
    abnormal = state.abnormal_mask() & active
    exposures = net.true_adj[:, abnormal].sum(axis=1)
    p_inf = 1.0 - (1.0 - p.beta) ** exposures
    u = state.rng.random(state.n)
    infected = (health == Health.S) & active & (u < p_inf)
    new_e = np.flatnonzero(infected)
    health[new_e] = Health.E
    state.exposed_at[new_e] = t

    # (3) recovery; quarantined nodes are released on recovery
    u = state.rng.random(state.n)
    recover = (health == Health.I) & (u < p.gamma)
    new_r = np.flatnonzero(recover)
    health[new_r] = Health.R
    for k in new_r:
        if net.removed[k]:
            net.restore_node(int(k))

    state.t = t + 1
    state.last_onsets = [int(i) for i in onsets]
    return StepReport(
        t=t,
        delta=len(new_e),
        newly_exposed=[int(i) for i in new_e],
        newly_infected=state.last_onsets,
        newly_recovered=[int(i) for i in new_r],
    )


def abnormal_rate(state: EpidemicState) -> float:
    """Share of nodes that have ever been exposed (and so ever abnormal)."""
    return float(np.count_nonzero(state.exposed_at >= 0)) / state.n


def observation(state: EpidemicState) -> list[int]:
    """Nodes that became symptomatic in the most recent step."""
    return list(state.last_onsets)
