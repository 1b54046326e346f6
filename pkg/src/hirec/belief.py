"""Abnormal-probability estimation with retroactive revision.

``p[i]`` is the estimated probability that node ``i`` is exposed or infected
at the start of a simulation step. ``q[i]`` is 1 until node ``i`` has been
seen symptomatic, then 0 forever.

Belief time ``tau`` means "start of simulation step ``tau``". Onsets
observed during simulation step ``k`` are therefore symptomatic from belief
time ``k + 1``, which is the time recorded in ``onset_time``.
"""

from __future__ import annotations

import numpy as np


def one_step_update(p, q, G, beta: float, gamma: float) -> np.ndarray:
    """Propagate beliefs through one step of the mean-field SEIR recursion.

    Returns ``(1 - gamma (1 - q)) p + (1 - p) q (1 - prod_j (1 - beta G_ij p_j))``.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    n = p.shape[0]
    if q.shape != (n,) or G.shape != (n, n):
        raise ValueError(f"shape mismatch: p {p.shape}, q {q.shape}, G {G.shape}")
    escape = np.prod(1.0 - beta * G * p[None, :], axis=1)
    out = (1.0 - gamma * (1.0 - q)) * p + (1.0 - p) * q * (1.0 - escape)
    return np.clip(out, 0.0, 1.0)


class BeliefState:
    """Sliding-window estimator that replays the last ``t0`` steps on new evidence.

    Edge knowledge is applied retroactively (the current known graph is used
    for every replayed step), while quarantine masks use the removed set that
    was actually in force during each historical step.
    """

    def __init__(self, n: int, beta: float, gamma: float, t0: int, zero_on_recovery: bool = False):
        self.n = n
        self.beta = beta
        self.gamma = gamma
        self.t0 = t0
        self.zero_on_recovery = zero_on_recovery
        self.t = 0
        self.history: list[np.ndarray] = [np.zeros(n)]
        self.removed_history: list[np.ndarray] = []
        self.onset_time = np.full(n, -1, dtype=np.int64)
        self.recovery_time = np.full(n, -1, dtype=np.int64)

    @property
    def q(self) -> np.ndarray:
        return (self.onset_time < 0).astype(np.float64)

    def q_at(self, tau: int) -> np.ndarray:
        seen = (self.onset_time >= 0) & (self.onset_time <= tau)
        return (~seen).astype(np.float64)

    def _force(self, tau: int, p: np.ndarray) -> np.ndarray:
        known = self.onset_time >= 0
        hit = known & (self.onset_time - self.t0 <= tau) & (tau <= self.onset_time)
        p[hit] = 1.0
        if self.zero_on_recovery:
            gone = (self.recovery_time >= 0) & (self.recovery_time <= tau)
            p[gone & ~hit] = 0.0
        return p

    def window(self) -> tuple[int, int]:
        return max(0, self.t - self.t0), self.t

    def advance(
        self, known_adj, removed_during_step, new_onsets=(), new_recoveries=(), step_index=None
    ) -> np.ndarray:
        """Fold in one simulation step's evidence and return the new ``p``.

        ``known_adj`` is the current known-edge adjacency (including nodes
        explored this step); ``removed_during_step`` is the quarantine mask
        that was in force while the step ran. ``step_index``, when given, must
        equal the simulation step being folded in.
        """
        if step_index is not None and step_index != self.t:
            raise ValueError(f"out-of-order update: expected step {self.t}, got {step_index}")
        t_new = self.t + 1
        for i in new_onsets:
            if self.onset_time[i] >= 0:
                raise ValueError(f"node {i} already reported symptomatic at {self.onset_time[i]}")
            self.onset_time[i] = t_new
        for i in new_recoveries:
            self.recovery_time[i] = t_new
        removed = np.asarray(removed_during_step, dtype=bool).copy()
        if removed.shape != (self.n,):
            raise ValueError("removed mask has wrong length")
        self.removed_history.append(removed)
        known = np.asarray(known_adj, dtype=bool)

        start = max(0, t_new - self.t0)
        self.history.append(np.zeros(self.n))
        for tau in range(start, t_new):
            p_tau = self._force(tau, self.history[tau].copy())
            self.history[tau] = p_tau
            active = ~self.removed_history[tau]
            G = known & active[:, None] & active[None, :]
            self.history[tau + 1] = one_step_update(p_tau, self.q_at(tau), G, self.beta, self.gamma)
        self.history[t_new] = self._force(t_new, self.history[t_new])
        self.t = t_new
        return self.history[t_new].copy()

    def current_beliefs(self) -> tuple[np.ndarray, np.ndarray]:
        return self.history[self.t].copy(), self.q
