"""Scale-free contact networks and the observability layer on top of them.

A :class:`ContactNetwork` keeps the static ground-truth graph together with
what the controller has learned about it: revealed edges, explored nodes and
quarantine (removal) flags. Removal is a mask, so restoring a node brings back
every one of its original links.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class GraphGenConfig:
    n: int = 100
    target_avg_degree: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"n must be >= 3, got {self.n}")
        if self.target_avg_degree < 2:
            raise ValueError(f"target_avg_degree must be >= 2, got {self.target_avg_degree}")
        if self.target_avg_degree > self.n - 1:
            raise ValueError(
                f"n={self.n} is too small for average degree {self.target_avg_degree}"
            )

    @property
    def attach(self) -> int:
        """Edges added per arriving node."""
        return max(1, int(math.floor(self.target_avg_degree / 2 + 0.5)))


class ContactNetwork:
    """Ground-truth undirected graph plus the monotone knowledge mask."""

    def __init__(self, n: int, edges=(), seed: int | None = None):
        self.n = int(n)
        self.seed = seed
        self.true_adj = np.zeros((self.n, self.n), dtype=bool)
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ValueError(f"edge ({u}, {v}) out of range for n={self.n}")
            self.true_adj[u, v] = self.true_adj[v, u] = True
        self.known_adj = np.zeros_like(self.true_adj)
        self.explored = np.zeros(self.n, dtype=bool)
        self.removed = np.zeros(self.n, dtype=bool)

    # -- ground truth -------------------------------------------------------

    @property
    def true_edges(self) -> set[tuple[int, int]]:
        iu, ju = np.nonzero(np.triu(self.true_adj, 1))
        return {(int(i), int(j)) for i, j in zip(iu, ju)}

    @property
    def known_edges(self) -> set[tuple[int, int]]:
        iu, ju = np.nonzero(np.triu(self.known_adj, 1))
        return {(int(i), int(j)) for i, j in zip(iu, ju)}

    @property
    def n_edges(self) -> int:
        return int(self.true_adj.sum()) // 2

    def copy(self) -> "ContactNetwork":
        other = ContactNetwork.__new__(ContactNetwork)
        other.n = self.n
        other.seed = self.seed
        other.true_adj = self.true_adj  # never mutated after construction
        other.known_adj = self.known_adj.copy()
        other.explored = self.explored.copy()
        other.removed = self.removed.copy()
        return other

    def reset_knowledge(self) -> None:
        self.known_adj[:] = False
        self.explored[:] = False
        self.removed[:] = False

    # -- knowledge ----------------------------------------------------------

    def explore_node(self, k: int) -> int:
        """Reveal every true edge incident to ``k``; return how many were new."""
        k = int(k)
        if not 0 <= k < self.n:
            raise IndexError(f"node {k} out of range")
        row = self.true_adj[k]
        new = int(np.count_nonzero(row & ~self.known_adj[k]))
        self.known_adj[k, row] = True
        self.known_adj[row, k] = True
        self.explored[k] = True
        return new

    def reveal_fraction(self, p_r: float, seed) -> int:
        """Reveal a uniformly sampled, rounded ``p_r`` share of the true edges."""
        if not 0.0 <= p_r <= 1.0:
            raise ValueError(f"p_r must lie in [0, 1], got {p_r}")
        iu, ju = np.nonzero(np.triu(self.true_adj, 1))
        count = int(math.floor(p_r * len(iu) + 0.5))
        if count == 0:
            return 0
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(iu), size=count, replace=False)
        self.known_adj[iu[pick], ju[pick]] = True
        self.known_adj[ju[pick], iu[pick]] = True
        return count

    def active_observable_adjacency(self) -> np.ndarray:
        """0/1 matrix of known edges between nodes that are not removed."""
        active = ~self.removed
        adj = self.known_adj & active[:, None] & active[None, :]
        return adj.astype(np.float64)

    def active_true_adjacency(self) -> np.ndarray:
        active = ~self.removed
        return self.true_adj & active[:, None] & active[None, :]

    def observable_degree(self) -> np.ndarray:
        return self.active_observable_adjacency().sum(axis=1)

    # -- quarantine ---------------------------------------------------------

    def remove_node(self, k: int) -> None:
        if self.removed[k]:
            raise ValueError(f"node {k} is already removed")
        self.removed[k] = True

    def restore_node(self, k: int) -> None:
        if not self.removed[k]:
            raise ValueError(f"node {k} is not removed")
        self.removed[k] = False

    def check_invariants(self) -> None:
        assert np.array_equal(self.true_adj, self.true_adj.T)
        assert not self.true_adj.diagonal().any()
        assert not (self.known_adj & ~self.true_adj).any(), "known edge not in true graph"
        for k in np.flatnonzero(self.explored):
            assert not (self.true_adj[k] & ~self.known_adj[k]).any()

    # -- serialization ------------------------------------------------------

    def save_edgelist(self, path) -> None:
        lines = [f"n={self.n} seed={self.seed if self.seed is not None else 'none'}"]
        lines += [f"{u} {v}" for u, v in sorted(self.true_edges)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load_edgelist(cls, path) -> "ContactNetwork":
        text = Path(path).read_text().splitlines()
        if not text:
            raise ValueError(f"{path}: empty graph file")
        header = dict(tok.split("=", 1) for tok in text[0].split())
        if "n" not in header:
            raise ValueError(f"{path}:1: header must be 'n=<N> seed=<seed>'")
        n = int(header["n"])
        seed = header.get("seed")
        seed = None if seed in (None, "none") else int(seed)
        edges = []
        seen = set()
        for lineno, line in enumerate(text[1:], start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'u v', got {line!r}")
            u, v = int(parts[0]), int(parts[1])
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"{path}:{lineno}: node id out of range for n={n}")
            if u == v:
                raise ValueError(f"{path}:{lineno}: self-loop on node {u}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ValueError(f"{path}:{lineno}: duplicate edge {key}")
            seen.add(key)
            edges.append(key)
        return cls(n, edges, seed=seed)


def generate_scale_free(cfg: GraphGenConfig) -> ContactNetwork:
    """Preferential-attachment graph seeded from a clique, with shuffled labels.

    Each arriving node links to ``cfg.attach`` distinct existing nodes chosen
    proportionally to degree. The result is relabeled by a seeded permutation
    so that node ids carry no information about arrival order (and hence
    about degree).
    """
    m = cfg.attach
    rng = np.random.default_rng(cfg.seed)
    core = m + 1
    edges = [(i, j) for i in range(core) for j in range(i + 1, core)]
    # every edge endpoint appears once per incident edge
    targets_pool = [v for e in edges for v in e]
    for new in range(core, cfg.n):
        chosen: set[int] = set()
        while len(chosen) < m:
            chosen.add(targets_pool[int(rng.integers(len(targets_pool)))])
        for v in sorted(chosen):
            edges.append((v, new))
            targets_pool.extend((v, new))
    perm = rng.permutation(cfg.n)
    edges = [(int(perm[u]), int(perm[v])) for u, v in edges]
    return ContactNetwork(cfg.n, edges, seed=cfg.seed)


def erdos_renyi(n: int, n_edges: int, seed) -> ContactNetwork:
    """Uniform random graph with exactly ``n_edges`` edges (reference model)."""
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    pick = rng.choice(len(iu), size=n_edges, replace=False)
    return ContactNetwork(n, zip(iu[pick], ju[pick]), seed=None)
