"""Pairwise gossip with stubborn agents.

One edge fires per tick, drawn from the interaction matrix with an alias
table. Randomness comes from ``numpy.random.Generator`` (PCG64) seeded via
``SeedSequence``; edges are drawn in fixed-size chunks so the trajectory for
a given seed does not depend on whether observers are attached.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
from numba import njit

from .graph_model import BlockGossipModel, InteractionMatrix, ModelError

CHUNK = 1 << 16

Observer = Callable[[int, np.ndarray], None]


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; ``seed`` may be an int, a SeedSequence or a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class EdgeSampler:
    """Vose alias table over the unordered pairs with positive probability."""

    pair_i: np.ndarray
    pair_j: np.ndarray
    probs: np.ndarray
    accept: np.ndarray
    alias: np.ndarray

    @property
    def n_pairs(self) -> int:
        return int(self.probs.size)

    def draw_indices(self, rng: np.random.Generator, size: int) -> np.ndarray:
        k = rng.integers(0, self.n_pairs, size=size)
        u = rng.random(size)
        return np.where(u < self.accept[k], k, self.alias[k])

    def draw(self, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
        k = self.draw_indices(rng, size)
        return self.pair_i[k], self.pair_j[k]

    def stream(self, rng: np.random.Generator, steps: int, chunk: int = CHUNK
               ) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield edge chunks covering ``steps`` ticks; the chunk layout is
        fixed so that prefixes of a run coincide with shorter runs."""
        done = 0
        while done < steps:
            ei, ej = self.draw(rng, chunk)
            take = min(chunk, steps - done)
            yield ei[:take], ej[:take]
            done += take

    def implied_probabilities(self) -> np.ndarray:
        """Exact per-pair probability encoded by the alias table."""
        m = self.n_pairs
        p = self.accept / m
        np.add.at(p, self.alias, (1.0 - self.accept) / m)
        return p


def build_edge_sampler(W: InteractionMatrix) -> EdgeSampler:
    i, j, w = W.pairs()
    if w.size == 0:
        raise ModelError("interaction matrix has no positive entry")
    m = w.size
    scaled = w * (m / w.sum())
    accept = np.ones(m)
    alias = np.arange(m)
    small = [k for k in range(m) if scaled[k] < 1.0]
    large = [k for k in range(m) if scaled[k] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        accept[s] = scaled[s]
        alias[s] = g
        scaled[g] -= 1.0 - scaled[s]
        (small if scaled[g] < 1.0 else large).append(g)
    # leftovers are 1 up to rounding
    for k in small + large:
        accept[k] = 1.0
        alias[k] = k
    return EdgeSampler(i.astype(np.int64), j.astype(np.int64), w, accept, alias.astype(np.int64))


@dataclass
class GossipState:
    """Full state vector (regular and stubborn agents) plus the tick count."""

    x: np.ndarray
    stubborn: np.ndarray
    time: int = 0

    @property
    def regular_states(self) -> np.ndarray:
        return self.x[~self.stubborn]


def gossip_step(x: np.ndarray, i: int, j: int, q: float, stubborn: np.ndarray) -> np.ndarray:
    """Return the state after edge {i, j} fires; the input is not modified."""
    if i == j:
        raise ModelError("an edge needs two distinct endpoints")
    out = np.array(x, dtype=float, copy=True)
    xi, xj = x[i], x[j]
    if not stubborn[i]:
        out[i] = q * xi + (1.0 - q) * xj
    if not stubborn[j]:
        out[j] = q * xj + (1.0 - q) * xi
    return out


@njit(cache=True)
def _apply_edges(x, stubborn, q, ei, ej):
    p = 1.0 - q
    for k in range(ei.size):
        i = ei[k]
        j = ej[k]
        xi = x[i]
        xj = x[j]
        if not stubborn[i]:
            x[i] = q * xi + p * xj
        if not stubborn[j]:
            x[j] = q * xj + p * xi


def full_state(stubborn: np.ndarray, x0_regular, stubborn_states) -> np.ndarray:
    x = np.empty(stubborn.size)
    x[~stubborn] = np.asarray(x0_regular, dtype=float)
    x[stubborn] = np.asarray(stubborn_states, dtype=float)
    return x


def simulate(
    W: InteractionMatrix,
    stubborn: np.ndarray,
    q: float,
    stubborn_states,
    x0,
    steps: int,
    seed,
    observers: Sequence[Observer] = (),
    sampler: EdgeSampler | None = None,
) -> GossipState:
    """Run ``steps`` ticks. ``x0`` holds the regular states. Each observer is
    called as ``obs(t, x_regular)`` after every tick t = 1..steps."""
    stubborn = np.asarray(stubborn, dtype=bool)
    x = full_state(stubborn, x0, stubborn_states)
    if steps <= 0:
        return GossipState(x, stubborn, 0)
    sampler = sampler or build_edge_sampler(W)
    rng = make_rng(seed)
    reg = ~stubborn
    t = 0
    for ei, ej in sampler.stream(rng, steps):
        if not observers:
            _apply_edges(x, stubborn, q, ei, ej)
            t += ei.size
            continue
        for i, j in zip(ei.tolist(), ej.tolist()):
            xi, xj = x[i], x[j]
            if not stubborn[i]:
                x[i] = q * xi + (1.0 - q) * xj
            if not stubborn[j]:
                x[j] = q * xj + (1.0 - q) * xi
            t += 1
            xr = x[reg]
            for obs in observers:
                obs(t, xr)
    return GossipState(x, stubborn, t)


def simulate_model(model: BlockGossipModel, x0, steps: int, seed, observers=()) -> GossipState:
    return simulate(
        model.interaction_matrix(),
        model.assignment.stubborn,
        model.q,
        model.stubborn_states,
        x0,
        steps,
        seed,
        observers,
    )


def uniform_initial_states(n_r: int, low: float, high: float, seed) -> np.ndarray:
    """Initial regular states drawn from uniform(low, high) with their own seed."""
    return make_rng(seed).uniform(low, high, size=n_r)


def one_tick_mean(W: InteractionMatrix, stubborn, q: float, x: np.ndarray) -> np.ndarray:
    """E{X^r(t+1) | X(t) = x} by enumerating every pair (brute force)."""
    stubborn = np.asarray(stubborn, dtype=bool)
    out = np.zeros(int((~stubborn).sum()))
    n = W.n
    for i in range(n):
        for j in range(i + 1, n):
            w = W.entries[i, j]
            if w:
                out += w * gossip_step(x, i, j, q, stubborn)[~stubborn]
    return out


class TrajectoryRecorder:
    """Observer that keeps every ``every``-th regular state vector."""

    def __init__(self, x0, every: int = 1):
        self.every = max(1, int(every))
        self.times = [0]
        self.rows = [np.array(x0, dtype=float)]

    def __call__(self, t: int, xr: np.ndarray) -> None:
        if t % self.every == 0:
            self.times.append(t)
            self.rows.append(xr.copy())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n_r = self.rows[0].size
        w.writerow(["t"] + [f"x_{k + 1}" for k in range(n_r)])
        for t, row in zip(self.times, self.rows):
            w.writerow([t] + [repr(float(v)) for v in row])
        return buf.getvalue()
