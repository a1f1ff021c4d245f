"""Community assignments, block interaction matrices and SBM graphs.

Agents are indexed from 0 internally. Community labels are 1-based, so a
two-community model has labels in {1, 2}. The canonical ordering used by
:meth:`CommunityAssignment.from_counts` lists, for each community in turn,
its regular agents followed by its stubborn agents.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse.linalg import eigsh

NORMALIZATION_TOL = 1e-12


class ModelError(ValueError):
    """Raised when a model or graph violates its structural assumptions."""


@dataclass(frozen=True)
class CommunityAssignment:
    """Per-agent community label and regular/stubborn role.

    ``stubborn_witness`` maps each stubborn agent to a regular agent known
    to share its community.
    """

    labels: np.ndarray
    stubborn: np.ndarray
    stubborn_witness: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        stubborn = np.asarray(self.stubborn, dtype=bool)
        if labels.ndim != 1 or labels.shape != stubborn.shape:
            raise ModelError("labels and roles must be 1-d arrays of equal length")
        if labels.size == 0 or labels.min() < 1:
            raise ModelError("community labels are 1-based and must be nonempty")
        labels.setflags(write=False)
        stubborn.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "stubborn", stubborn)

        k = int(labels.max())
        for c in range(1, k + 1):
            members = labels == c
            if not members.any():
                raise ModelError(f"community {c} is empty")
            if not (members & ~stubborn).any():
                raise ModelError(f"community {c} has no regular agent")

        witness = {int(i): int(j) for i, j in dict(self.stubborn_witness).items()}
        if not witness:
            witness = self._default_witness(labels, stubborn)
        for i in np.flatnonzero(stubborn):
            j = witness.get(int(i))
            if j is None:
                raise ModelError(f"stubborn agent {i} has no witness")
            if stubborn[j] or labels[j] != labels[i]:
                raise ModelError(
                    f"witness {j} of stubborn agent {i} must be a regular agent "
                    "of the same community"
                )
        object.__setattr__(self, "stubborn_witness", witness)

    @staticmethod
    def _default_witness(labels, stubborn):
        # first regular agent of the same community
        first = {}
        for j in np.flatnonzero(~stubborn):
            first.setdefault(int(labels[j]), int(j))
        return {int(i): first[int(labels[i])] for i in np.flatnonzero(stubborn)}

    @classmethod
    def from_counts(cls, communities: Sequence[tuple[int, int]]) -> "CommunityAssignment":
        """Canonical sorted assignment from ``[(n_r1, n_s1), (n_r2, n_s2), ...]``."""
        labels, stubborn = [], []
        for k, (nr, ns) in enumerate(communities, start=1):
            if nr < 0 or ns < 0:
                raise ModelError("agent counts must be nonnegative")
            labels += [k] * (nr + ns)
            stubborn += [False] * nr + [True] * ns
        return cls(np.array(labels), np.array(stubborn))

    @property
    def n(self) -> int:
        return int(self.labels.size)

    @property
    def n_communities(self) -> int:
        return int(self.labels.max())

    @property
    def regular_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.stubborn)

    @property
    def stubborn_indices(self) -> np.ndarray:
        return np.flatnonzero(self.stubborn)

    @property
    def n_r(self) -> int:
        return int((~self.stubborn).sum())

    @property
    def n_s(self) -> int:
        return int(self.stubborn.sum())

    def sizes(self) -> np.ndarray:
        """Community sizes ``n_k`` for k = 1..K."""
        return np.bincount(self.labels, minlength=self.n_communities + 1)[1:]

    def regular_sizes(self) -> np.ndarray:
        return np.bincount(self.labels[~self.stubborn], minlength=self.n_communities + 1)[1:]

    def stubborn_sizes(self) -> np.ndarray:
        return np.bincount(self.labels[self.stubborn], minlength=self.n_communities + 1)[1:]

    def witness_positions(self) -> np.ndarray:
        """For each stubborn agent (in index order), the position of its
        witness within the regular-agent vector."""
        pos = np.full(self.n, -1, dtype=np.int64)
        pos[self.regular_indices] = np.arange(self.n_r)
        return np.array(
            [pos[self.stubborn_witness[int(i)]] for i in self.stubborn_indices],
            dtype=np.int64,
        )

    def canonical_permutation(self) -> np.ndarray:
        """Agent order sorted by (community, regular-before-stubborn, index)."""
        return np.lexsort((np.arange(self.n), self.stubborn, self.labels))


def normalization_residual(sizes: Sequence[int], w_s: float, w_d: float) -> tuple[float, float]:
    """Residual of the pair-mass normalization and the scale used to judge it."""
    sizes = np.asarray(sizes, dtype=float)
    within = float(np.sum(sizes * (sizes - 1))) * w_s
    across = float(sizes.sum() ** 2 - np.sum(sizes**2)) * w_d
    return within + across - 2.0, max(1.0, abs(within), abs(across))


@dataclass(frozen=True)
class BlockGossipModel:
    """The complete generative model: communities, w_s, w_d, q and the
    stubborn states (ordered as ``assignment.stubborn_indices``)."""

    assignment: CommunityAssignment
    w_s: float
    w_d: float
    q: float
    stubborn_states: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.stubborn_states, dtype=float).reshape(-1)
        xs.setflags(write=False)
        object.__setattr__(self, "stubborn_states", xs)
        if xs.size != self.assignment.n_s:
            raise ModelError(
                f"expected {self.assignment.n_s} stubborn states, got {xs.size}"
            )
        if not (self.w_s > 0 and self.w_d > 0):
            raise ModelError("w_s and w_d must be positive")
        if self.w_s == self.w_d:
            raise ModelError("w_s must differ from w_d (no block structure otherwise)")
        if not 0 <= self.q < 1:
            raise ModelError("q must lie in [0, 1)")
        res, scale = normalization_residual(self.assignment.sizes(), self.w_s, self.w_d)
        if abs(res) > NORMALIZATION_TOL * scale:
            raise ModelError(
                f"pair probabilities do not sum to one: residual {res:.3e} "
                f"(w_s={self.w_s!r}, w_d={self.w_d!r})"
            )

    @classmethod
    def from_ratio(cls, communities, ratio, q, stubborn_states) -> "BlockGossipModel":
        assignment = CommunityAssignment.from_counts(communities)
        w_s, w_d = solve_interaction_probs_k(assignment.sizes(), ratio)
        return cls(assignment, w_s, w_d, q, stubborn_states)

    @property
    def n(self) -> int:
        return self.assignment.n

    def stubborn_sums(self) -> np.ndarray:
        """``1^T x^{sk}`` per community, zero where a community has no stubborn agent."""
        a = self.assignment
        out = np.zeros(a.n_communities)
        np.add.at(out, a.labels[a.stubborn] - 1, self.stubborn_states)
        return out

    def state_box(self) -> tuple[float, float]:
        return float(self.stubborn_states.min()), float(self.stubborn_states.max())

    def interaction_matrix(self) -> "InteractionMatrix":
        return build_block_interaction_matrix(self)

    def check_identifiable(self) -> None:
        """Raise unless both communities hold stubborn agents with distinct
        community-mean stubborn states."""
        a = self.assignment
        if a.n_communities != 2:
            raise ModelError("identifiability is defined for two communities")
        ns = a.stubborn_sizes()
        if ns.min() == 0:
            raise ModelError("both communities need stubborn agents")
        means = self.stubborn_sums() / ns
        if means[0] == means[1]:
            raise ModelError("community-mean stubborn states coincide")


@dataclass(frozen=True)
class InteractionMatrix:
    """Symmetric, zero-diagonal pair-selection probabilities summing to one
    over unordered pairs."""

    entries: np.ndarray

    def __post_init__(self):
        w = np.array(self.entries, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ModelError("interaction matrix must be square")
        if (w < 0).any():
            raise ModelError("interaction probabilities must be nonnegative")
        if not np.array_equal(w, w.T):
            raise ModelError("interaction matrix must be symmetric")
        if np.diag(w).any():
            raise ModelError("interaction matrix must have a zero diagonal")
        total = w.sum() / 2
        if abs(total - 1.0) > NORMALIZATION_TOL * max(1.0, w.shape[0]):
            raise ModelError(f"pair probabilities sum to {total!r}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "entries", w)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def pair_mass(self) -> float:
        return float(self.entries.sum() / 2)

    def pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Upper-triangle pairs with positive probability: (i, j, w_ij)."""
        i, j = np.nonzero(np.triu(self.entries, 1))
        return i, j, self.entries[i, j]


def solve_interaction_probs_k(sizes: Sequence[int], ratio: float) -> tuple[float, float]:
    """Solve the normalization for (w_s, w_d) given ``w_s / w_d = ratio``."""
    sizes = np.asarray(sizes, dtype=np.int64)
    if ratio <= 0:
        raise ModelError("ratio must be positive")
    if ratio == 1:
        raise ModelError("ratio 1 gives w_s == w_d")
    if sizes.sum() < 2:
        raise ModelError("need at least two agents")
    within = int(np.sum(sizes * (sizes - 1)))
    across = int(sizes.sum() ** 2 - np.sum(sizes**2))
    if within == 0 or across == 0:
        raise ModelError("need both within- and cross-community pairs")
    w_d = 2.0 / (within * ratio + across)
    return ratio * w_d, w_d


def solve_interaction_probs(n1: int, n2: int, ratio: float) -> tuple[float, float]:
    """(w_s, w_d) with w_s/w_d = ratio satisfying
    ``(n1(n1-1) + n2(n2-1)) w_s + 2 n1 n2 w_d = 2``."""
    if n1 < 1 or n2 < 1:
        raise ModelError("both communities must be nonempty")
    return solve_interaction_probs_k([n1, n2], ratio)


def build_block_interaction_matrix(model: BlockGossipModel) -> InteractionMatrix:
    labels = model.assignment.labels
    same = labels[:, None] == labels[None, :]
    w = np.where(same, model.w_s, model.w_d)
    np.fill_diagonal(w, 0.0)
    return InteractionMatrix(w)


@dataclass(frozen=True)
class SbmParams:
    n: int
    nu1: float
    p_s: float
    p_d: float

    def __post_init__(self):
        if self.n < 2:
            raise ModelError("SBM needs at least two agents")
        if not 0 < self.nu1 < 1:
            raise ModelError("nu1 must lie in (0, 1)")
        n1 = self.nu1 * self.n
        if abs(n1 - round(n1)) > 1e-9:
            raise ModelError("nu1 * n must be an integer")
        for p in (self.p_s, self.p_d):
            if not 0 < p <= 1:
                raise ModelError("link probabilities must lie in (0, 1]")

    @property
    def n1(self) -> int:
        return int(round(self.nu1 * self.n))

    @property
    def n2(self) -> int:
        return self.n - self.n1

    def labels(self) -> np.ndarray:
        return np.r_[np.ones(self.n1, dtype=np.int64), np.full(self.n2, 2, dtype=np.int64)]

    def expected_edges(self) -> float:
        n, nu1 = self.n, self.nu1
        nu2 = 1.0 - nu1
        return (0.5 * self.p_s * (nu1**2 + nu2**2 - 1.0 / n) + self.p_d * nu1 * nu2) * n**2


@dataclass(frozen=True)
class SimpleGraph:
    """Undirected simple graph; ``edges`` is an (m, 2) array of sorted
    pairs i < j in lexicographic order."""

    n: int
    edges: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        e = np.sort(e, axis=1)
        if (e[:, 0] == e[:, 1]).any():
            raise ModelError("self-loops are not allowed")
        if e.size and (e.min() < 0 or e.max() >= self.n):
            raise ModelError("edge endpoint out of range")
        e = np.unique(e, axis=0) if e.size else e
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        a[self.edges[:, 0], self.edges[:, 1]] = 1.0
        a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def to_edge_list(self) -> str:
        return "".join(f"{i + 1} {j + 1}\n" for i, j in self.edges)

    @classmethod
    def from_edge_list(cls, n: int, text: str) -> "SimpleGraph":
        rows = [line.split() for line in text.splitlines() if line.strip()]
        return cls(n, np.array([[int(a) - 1, int(b) - 1] for a, b in rows], dtype=np.int64))


def sample_sbm(params: SbmParams, seed) -> SimpleGraph:
    """Each unordered pair is linked independently with p_s (same label) or
    p_d (different labels). Row i draws its n-i-1 Bernoulli trials in order."""
    rng = np.random.default_rng(seed)
    labels = params.labels()
    chunks = []
    for i in range(params.n - 1):
        js = np.arange(i + 1, params.n)
        p = np.where(labels[js] == labels[i], params.p_s, params.p_d)
        hit = js[rng.random(js.size) < p]
        if hit.size:
            chunks.append(np.column_stack([np.full(hit.size, i), hit]))
    edges = np.concatenate(chunks) if chunks else np.zeros((0, 2), dtype=np.int64)
    return SimpleGraph(params.n, edges)


def graph_to_interaction(g: SimpleGraph) -> InteractionMatrix:
    if g.n_edges == 0:
        raise ModelError("graph has no edges")
    return InteractionMatrix(g.adjacency() / g.n_edges)


def weighted_to_interaction(weights: np.ndarray) -> InteractionMatrix:
    """Normalize a symmetric nonnegative weight matrix to unit pair mass."""
    w = np.asarray(weights, dtype=float)
    total = np.triu(w, 1).sum()
    if total <= 0:
        raise ModelError("weight matrix has no positive entry")
    return InteractionMatrix(w / total)


def expected_interaction(params: SbmParams) -> InteractionMatrix:
    """E{A}/E{alpha}: block matrix with p_s/E{alpha} within and p_d/E{alpha}
    across communities."""
    labels = params.labels()
    same = labels[:, None] == labels[None, :]
    ea = params.expected_edges()
    w = np.where(same, params.p_s / ea, params.p_d / ea)
    np.fill_diagonal(w, 0.0)
    # E{alpha} is computed in closed form; renormalize away rounding only
    w /= w.sum() / 2
    return InteractionMatrix(w)


def deviation_norm(sampled: InteractionMatrix, expected: InteractionMatrix) -> float:
    """Spectral norm of the difference of two interaction matrices."""
    a = sampled.entries if isinstance(sampled, InteractionMatrix) else np.asarray(sampled)
    b = expected.entries if isinstance(expected, InteractionMatrix) else np.asarray(expected)
    if a.shape != b.shape:
        raise ModelError(f"dimension mismatch: {a.shape} vs {b.shape}")
    d = a - b
    if not d.any():
        return 0.0
    if d.shape[0] > 600:
        vals = eigsh(d, k=1, which="LM", return_eigenvectors=False, tol=1e-10)
        return float(abs(vals[0]))
    return float(np.max(np.abs(np.linalg.eigvalsh(d))))


def _build_model_from_dict(cfg: Mapping) -> BlockGossipModel:
    if "communities" not in cfg:
        raise ModelError("model config needs 'communities'")
    communities = [(int(c["regular"]), int(c.get("stubborn", 0))) for c in cfg["communities"]]
    if "stubborn_states" not in cfg:
        raise ModelError("model config needs 'stubborn_states'")
    q = float(cfg.get("q", 0.5))
    assignment = CommunityAssignment.from_counts(communities)
    if "ratio" in cfg:
        w_s, w_d = solve_interaction_probs_k(assignment.sizes(), float(cfg["ratio"]))
    elif "w_s" in cfg and "w_d" in cfg:
        w_s, w_d = float(cfg["w_s"]), float(cfg["w_d"])
    elif "w_s" in cfg:
        sizes = assignment.sizes()
        res, _ = normalization_residual(sizes, float(cfg["w_s"]), 0.0)
        across = float(sizes.sum() ** 2 - np.sum(sizes**2))
        w_s, w_d = float(cfg["w_s"]), -res / across
    else:
        raise ModelError("model config needs 'w_s' or 'ratio'")
    return BlockGossipModel(assignment, w_s, w_d, q, np.asarray(cfg["stubborn_states"], float))


def load_model_config(source) -> BlockGossipModel:
    """Build a model from a JSON mapping, JSON text or a path to a JSON file."""
    if isinstance(source, Mapping):
        return _build_model_from_dict(source)
    text = str(source)
    if not text.lstrip().startswith("{"):
        text = Path(text).read_text()
    return _build_model_from_dict(json.loads(text))


def model_to_config(model: BlockGossipModel) -> dict:
    a = model.assignment
    return {
        "communities": [
            {"regular": int(r), "stubborn": int(s)}
            for r, s in zip(a.regular_sizes(), a.stubborn_sizes())
        ],
        "w_s": model.w_s,
        "w_d": model.w_d,
        "q": model.q,
        "stubborn_states": [float(x) for x in model.stubborn_states],
    }


def log_regime_ok(params: SbmParams) -> bool:
    """Whether min(p_s, p_d) is at least of order log(n)/n (advisory only)."""
    return min(params.p_s, params.p_d) >= math.log(params.n) / params.n


@dataclass(frozen=True)
class GossipNetwork:
    """Any interaction matrix with roles, true labels, q and stubborn states.

    Block models, SBM samples and weighted real networks all reduce to this.
    """

    W: InteractionMatrix
    assignment: CommunityAssignment
    q: float
    stubborn_states: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.stubborn_states, dtype=float).reshape(-1)
        if xs.size != self.assignment.n_s:
            raise ModelError(f"expected {self.assignment.n_s} stubborn states, got {xs.size}")
        if self.W.n != self.assignment.n:
            raise ModelError("interaction matrix and assignment disagree on n")
        if not 0 <= self.q < 1:
            raise ModelError("q must lie in [0, 1)")
        object.__setattr__(self, "stubborn_states", xs)

    @property
    def n(self) -> int:
        return self.assignment.n

    @classmethod
    def from_model(cls, model: BlockGossipModel) -> "GossipNetwork":
        return cls(model.interaction_matrix(), model.assignment, model.q, model.stubborn_states)

    def state_box(self) -> tuple[float, float]:
        return float(self.stubborn_states.min()), float(self.stubborn_states.max())
