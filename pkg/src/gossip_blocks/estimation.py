"""Joint community recovery and interaction-probability estimation.

The estimator consumes the regular-agent trajectory online: it keeps the
running (Polyak) average S^r(t) of X^r(0..t), labels a regular agent 1 when
its average is strictly above the grand mean, copies labels to stubborn
agents from their witnesses, and moves w_s_hat by a stochastic-approximation
step of size a/t. w_d_hat follows from the pair-mass normalization.

Two implementations share these semantics:

* :class:`JointEstimator` is a plain numpy observer, one call per tick.
* :func:`run_trajectory` fuses the gossip dynamics and the estimator in a
  compiled loop and is used for long runs. Both consume the same edge stream,
  so their outputs agree to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from numba import njit
from scipy.linalg import eigh

from .dynamics import EdgeSampler, build_edge_sampler, make_rng
from .graph_model import GossipNetwork, InteractionMatrix, ModelError


# -- running average ----------------------------------------------------------

class RunningAverage:
    """Arithmetic mean of X^r(0..t) with Kahan-compensated sums."""

    def __init__(self, x0):
        x0 = np.array(x0, dtype=float)
        self._sum = x0.copy()
        self._comp = np.zeros_like(x0)
        self.count = 1

    def update(self, x) -> None:
        y = np.asarray(x, dtype=float) - self._comp
        s = self._sum + y
        self._comp = (s - self._sum) - y
        self._sum = s
        self.count += 1

    @property
    def mean(self) -> np.ndarray:
        return self._sum / self.count


# -- labels and the SA step -----------------------------------------------------

def recover_labels(S: np.ndarray, stubborn: np.ndarray, witness_pos: np.ndarray,
                   sbar: float | None = None) -> np.ndarray:
    """Labels for all agents: regular agent -> 1 iff S_i > mean(S), else 2;
    stubborn agent -> label of its witness (a position in ``S``)."""
    S = np.asarray(S, dtype=float)
    stubborn = np.asarray(stubborn, dtype=bool)
    if sbar is None:
        sbar = S.mean()
    reg_labels = np.where(S > sbar, 1, 2)
    labels = np.empty(stubborn.size, dtype=np.int64)
    labels[~stubborn] = reg_labels
    labels[stubborn] = reg_labels[np.asarray(witness_pos, dtype=np.int64)]
    return labels


@dataclass(frozen=True)
class EstimatorState:
    labels: np.ndarray
    w_s_hat: float
    w_d_hat: float
    a: float = 1.0
    skipped: int = 0
    h1: float = math.nan
    h2: float = math.nan
    g: float = math.nan


def wd_from_ws(ws: float, n1: float, n2: float) -> float:
    return (2.0 - ws * (n1 * n1 + n2 * n2 - n1 - n2)) / (2.0 * n1 * n2)


def sa_step(est: EstimatorState, S: np.ndarray, t: int, stubborn: np.ndarray,
            stubborn_states: np.ndarray) -> EstimatorState:
    """One interaction-estimation step at tick ``t`` using ``est.labels``.

    The step is skipped (iterates carried over, ``skipped`` incremented) when
    no regular agent carries label 1 or one of the estimated communities is
    empty.
    """
    if t < 1:
        raise ValueError("t must be at least 1")
    stubborn = np.asarray(stubborn, dtype=bool)
    S = np.asarray(S, dtype=float)
    xs = np.asarray(stubborn_states, dtype=float)
    labels = est.labels
    reg_lab = labels[~stubborn]
    st_lab = labels[stubborn]
    r1 = reg_lab == 1
    s1 = st_lab == 1
    nr1 = int(r1.sum())
    n1 = float((labels == 1).sum())
    n2 = float(labels.size - n1)
    if nr1 == 0 or n1 * n2 == 0:
        return replace(est, skipped=est.skipped + 1)
    sum_r1 = float(S[r1].sum())
    sum_r2 = float(S[~r1].sum())
    h1 = int(s1.sum()) / nr1 * sum_r1 - float(xs[s1].sum())
    h2 = n2 / nr1 * sum_r1 - sum_r2 - float(xs[~s1].sum())
    c = (n1 * n1 + n2 * n2 - n1 - n2) / (2.0 * n1 * n2)
    g = h1 - c * h2
    ws = est.w_s_hat - (est.a / t) * np.sign(g) * (g * est.w_s_hat + h2 / (n1 * n2))
    ws = float(ws)
    return replace(est, w_s_hat=ws, w_d_hat=wd_from_ws(ws, n1, n2), h1=h1, h2=h2, g=g)


def initial_estimate(n: int, rng: np.random.Generator, ws0: float | None = None):
    """Random initial labels and w_s_hat(0) ~ uniform(0, 2 / (n (n - 1)))."""
    labels = rng.integers(1, 3, size=n)
    if ws0 is None:
        ws0 = float(rng.uniform(0.0, 2.0 / (n * (n - 1))))
    n1 = float((labels == 1).sum())
    n2 = n - n1
    wd0 = wd_from_ws(ws0, n1, n2) if n1 * n2 > 0 else math.nan
    return labels, ws0, wd0


@dataclass(frozen=True)
class Snapshot:
    t: int
    labels: np.ndarray
    w_s_hat: float
    w_d_hat: float
    skipped: int
    S: np.ndarray | None = None
    baselines: dict = field(default_factory=dict)
    # last tick <= t without exact recovery (tick 0 counts as a miss)
    last_miss: int | None = None


class JointEstimator:
    """Reference online estimator; use as a dynamics observer ``est(t, xr)``."""

    def __init__(self, x0, stubborn, witness_pos, stubborn_states, a: float = 1.0,
                 seed=None, ws0: float | None = None, snapshot_times: Iterable[int] = ()):
        if a <= 0:
            raise ValueError("step parameter a must be positive")
        self.stubborn = np.asarray(stubborn, dtype=bool)
        self.witness_pos = np.asarray(witness_pos, dtype=np.int64)
        self.stubborn_states = np.asarray(stubborn_states, dtype=float)
        self.avg = RunningAverage(x0)
        labels, ws, wd = initial_estimate(self.stubborn.size, make_rng(seed), ws0)
        self.state = EstimatorState(labels, ws, wd, a)
        self.t = 0
        self._snap_times = set(int(v) for v in snapshot_times)
        self.snapshots: list[Snapshot] = []
        if 0 in self._snap_times:
            self._snapshot()

    def __call__(self, t: int, xr: np.ndarray) -> None:
        self.avg.update(xr)
        self.t = t
        S = self.avg.mean
        labels = recover_labels(S, self.stubborn, self.witness_pos)
        self.state = sa_step(replace(self.state, labels=labels), S, t, self.stubborn,
                             self.stubborn_states)
        if t in self._snap_times:
            self._snapshot()

    def _snapshot(self) -> None:
        st = self.state
        self.snapshots.append(
            Snapshot(self.t, st.labels.copy(), st.w_s_hat, st.w_d_hat, st.skipped,
                     self.avg.mean.copy())
        )


def run_algorithm1(stream: Iterable[np.ndarray], stubborn, witness_pos, stubborn_states,
                   a: float = 1.0, seed=None, snapshot_times: Iterable[int] = ()
                   ) -> list[Snapshot]:
    """Consume X^r(0), X^r(1), ... from ``stream`` in one pass."""
    it = iter(stream)
    try:
        x0 = next(it)
    except StopIteration:
        return []
    est = JointEstimator(x0, stubborn, witness_pos, stubborn_states, a, seed,
                         snapshot_times=snapshot_times)
    for t, xr in enumerate(it, start=1):
        est(t, xr)
    return est.snapshots


# -- compiled joint loop -------------------------------------------------------

@njit(cache=True)
def _joint_kernel(x, nr, q, ei, ej, csum, last, wcnt, wsum, xs_total, S,
                  t, ws, wd, a, n_total, skipped, truth, last_miss):
    """Agents are renumbered so that regular agents occupy 0..nr-1.

    ``csum[i]`` holds sum_{tau < last[i]} X_i(tau); agent i has been constant
    since tick ``last[i]``. When ``truth`` (regular labels) is nonempty, the
    last tick without exact recovery is tracked in ``last_miss``.
    """
    p = 1.0 - q
    n_s = n_total - nr
    sbar = 0.0
    for k in range(ei.size):
        i = ei[k]
        j = ej[k]
        t += 1
        xi = x[i]
        xj = x[j]
        if i < nr:
            csum[i] += xi * (t - last[i])
            last[i] = t
            x[i] = q * xi + p * xj
        if j < nr:
            csum[j] += xj * (t - last[j])
            last[j] = t
            x[j] = q * xj + p * xi
        inv = 1.0 / (t + 1)
        total = 0.0
        for r in range(nr):
            s = (csum[r] + x[r] * (t + 1 - last[r])) * inv
            S[r] = s
            total += s
        sbar = total / nr
        nr1 = 0
        ns1 = 0
        sum_r1 = 0.0
        sum_r2 = 0.0
        xs1 = 0.0
        hits = 0
        for r in range(nr):
            s = S[r]
            if s > sbar:
                nr1 += 1
                sum_r1 += s
                ns1 += wcnt[r]
                xs1 += wsum[r]
                lab = 1
            else:
                sum_r2 += s
                lab = 2
            if truth.size and truth[r] == lab:
                hits += 1
        if truth.size and hits != 0 and hits != nr:
            last_miss = t
        n1 = float(nr1 + ns1)
        n2 = float(n_total) - n1
        if nr1 == 0 or n1 * n2 == 0.0:
            skipped += 1
            continue
        h1 = ns1 / nr1 * sum_r1 - xs1
        h2 = n2 / nr1 * sum_r1 - sum_r2 - (xs_total - xs1)
        c = (n1 * n1 + n2 * n2 - n1 - n2) / (2.0 * n1 * n2)
        g = h1 - c * h2
        sg = 0.0
        if g > 0:
            sg = 1.0
        elif g < 0:
            sg = -1.0
        ws = ws - (a / t) * sg * (g * ws + h2 / (n1 * n2))
        wd = (2.0 - ws * (n1 * n1 + n2 * n2 - n1 - n2)) / (2.0 * n1 * n2)
    return t, ws, wd, skipped, sbar, last_miss


def geometric_grid(steps: int, ratio: float = 1.2) -> np.ndarray:
    """Snapshot ticks ceil(ratio^k) up to ``steps``, always including ``steps``."""
    if steps <= 0:
        return np.zeros(0, dtype=np.int64)
    kmax = int(math.ceil(math.log(steps) / math.log(ratio))) + 1
    pts = {min(steps, int(math.ceil(ratio**k))) for k in range(kmax + 1)}
    pts.add(steps)
    return np.array(sorted(pts), dtype=np.int64)


Baseline = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


def run_trajectory(
    net: GossipNetwork,
    x0,
    steps: int,
    seed,
    *,
    a: float = 1.0,
    est_seed=None,
    ws0: float | None = None,
    snapshot_times: Sequence[int] | None = None,
    keep_S: bool = False,
    kmeans_seed=None,
    baselines: Sequence[str] = (),
    sampler: EdgeSampler | None = None,
    track_recovery: bool = False,
) -> list[Snapshot]:
    """Simulate ``steps`` ticks on ``net`` and run the estimator alongside.

    ``baselines`` may contain ``"kmeans"``, ``"kmeans++"`` and ``"spectral"``;
    each is evaluated only at snapshot ticks. Spectral clustering uses the
    activation counts of the same run (privileged information).
    ``track_recovery`` records, per tick, whether the estimated labels match the
    true communities, so snapshots carry ``last_miss``.
    """
    asg = net.assignment
    n, nr = asg.n, asg.n_r
    stubborn = asg.stubborn
    reg_idx, st_idx = asg.regular_indices, asg.stubborn_indices
    # renumber: regular agents first
    new_index = np.empty(n, dtype=np.int64)
    new_index[reg_idx] = np.arange(nr)
    new_index[st_idx] = nr + np.arange(st_idx.size)

    x = np.empty(n)
    x[:nr] = np.asarray(x0, dtype=float)
    x[nr:] = net.stubborn_states
    witness_pos = asg.witness_positions()
    wcnt = np.bincount(witness_pos, minlength=nr).astype(np.int64)
    wsum = np.bincount(witness_pos, weights=net.stubborn_states, minlength=nr).astype(float)
    xs_total = float(net.stubborn_states.sum())

    sampler = sampler or build_edge_sampler(net.W)
    rng = make_rng(seed)
    labels0, ws, wd = initial_estimate(n, make_rng(est_seed), ws0)

    csum = np.zeros(nr)
    last = np.zeros(nr, dtype=np.int64)
    S = x[:nr].copy()
    skipped = 0
    t = 0
    last_miss = 0
    truth_reg = asg.labels[reg_idx] if track_recovery else np.zeros(0, dtype=np.int64)
    sbar = float(S.mean())

    if snapshot_times is None:
        snapshot_times = geometric_grid(steps)
    snaps_wanted = sorted(set(int(v) for v in snapshot_times if 0 <= v <= steps))
    want_spectral = "spectral" in baselines
    counts = np.zeros((n, n), dtype=np.int64) if want_spectral else None
    km_rng = make_rng(kmeans_seed)
    out: list[Snapshot] = []

    def snapshot():
        if t == 0:
            labels = labels0
        else:
            labels = recover_labels(S, stubborn, witness_pos, sbar)
        extra = {}
        for name in baselines:
            if name in ("kmeans", "kmeans++"):
                init = "forgy" if name == "kmeans" else "plusplus"
                lab_r, _, _ = kmeans_1d(S, 2, init, km_rng)
                extra[name] = _expand_labels(lab_r, stubborn, witness_pos)
            elif name == "spectral":
                if t == 0:
                    extra[name] = labels0.copy()
                else:
                    W_hat = estimate_W_from_activations(counts, t)
                    extra[name], _ = spectral_cluster(W_hat)
            else:
                raise ValueError(f"unknown baseline {name!r}")
        out.append(Snapshot(t, labels.copy(), ws, wd, skipped,
                            S.copy() if keep_S else None, extra,
                            last_miss if track_recovery else None))

    snap_iter = iter(snaps_wanted)
    next_snap = next(snap_iter, None)
    if next_snap == 0:
        snapshot()
        next_snap = next(snap_iter, None)

    done = 0
    for ei_full, ej_full in sampler.stream(rng, steps):
        # kernel works on renumbered agents, activation counts on original ones
        ri, rj = new_index[ei_full], new_index[ej_full]
        start = 0
        m = ei_full.size
        while start < m:
            stop = m
            if next_snap is not None and next_snap - done - start <= m - start:
                stop = start + (next_snap - done - start)
            seg_i, seg_j = ri[start:stop], rj[start:stop]
            t, ws, wd, skipped, sb, last_miss = _joint_kernel(
                x, nr, net.q, seg_i, seg_j, csum, last, wcnt, wsum, xs_total, S,
                t, ws, wd, a, n, skipped, truth_reg, last_miss,
            )
            if stop > start:
                sbar = sb
            if want_spectral:
                np.add.at(counts, (ei_full[start:stop], ej_full[start:stop]), 1)
            start = stop
            if next_snap is not None and done + start == next_snap:
                snapshot()
                next_snap = next(snap_iter, None)
        done += m
    return out


def final_state_regular(net: GossipNetwork, x0, steps: int, seed) -> np.ndarray:
    """Convenience: regular states after ``steps`` ticks (dynamics only)."""
    from .dynamics import simulate

    return simulate(net.W, net.assignment.stubborn, net.q, net.stubborn_states, x0,
                    steps, seed).regular_states


# -- baselines -----------------------------------------------------------------

def _expand_labels(reg_labels, stubborn, witness_pos):
    labels = np.empty(stubborn.size, dtype=np.int64)
    labels[~stubborn] = reg_labels
    labels[stubborn] = np.asarray(reg_labels)[witness_pos]
    return labels


def kmeans_1d(values, k: int = 2, init: str = "forgy", seed=None, max_iter: int = 100):
    """Lloyd's algorithm on scalars.

    Returns (labels, centers, degenerate). Labels are 1..k with label 1 on the
    largest center. ``degenerate`` is set when a cluster ends up empty or the
    seeding could not find k distinct points.
    """
    v = np.asarray(values, dtype=float)
    if v.size < k:
        raise ValueError("need at least k values")
    rng = make_rng(seed)
    degenerate = False
    if init == "forgy":
        centers = v[rng.choice(v.size, size=k, replace=False)].copy()
    elif init == "plusplus":
        centers = np.empty(k)
        centers[0] = v[rng.integers(v.size)]
        for c in range(1, k):
            d2 = np.min((v[:, None] - centers[None, :c]) ** 2, axis=1)
            tot = d2.sum()
            if tot == 0:
                degenerate = True
                centers[c] = v[rng.integers(v.size)]
            else:
                centers[c] = v[rng.choice(v.size, p=d2 / tot)]
    else:
        raise ValueError(f"unknown init {init!r}")

    assign = np.argmin(np.abs(v[:, None] - centers[None, :]), axis=1)
    for _ in range(max_iter):
        for c in range(k):
            members = v[assign == c]
            if members.size:
                centers[c] = members.mean()
        new = np.argmin(np.abs(v[:, None] - centers[None, :]), axis=1)
        if np.array_equal(new, assign):
            break
        assign = new
    sizes = np.bincount(assign, minlength=k)
    if (sizes == 0).any():
        degenerate = True
    order = np.argsort(-centers, kind="stable")
    rank = np.empty(k, dtype=np.int64)
    rank[order] = np.arange(1, k + 1)
    return rank[assign], centers[order], degenerate


def estimate_W_from_activations(counts: np.ndarray, t: int) -> np.ndarray:
    """W_hat[i, j] = activations of {i, j} / t, symmetrized."""
    if t <= 0:
        raise ValueError("t must be positive")
    c = np.asarray(counts, dtype=float)
    c = c + c.T
    np.fill_diagonal(c, 0.0)
    return c / t


def spectral_cluster(W_hat) -> tuple[np.ndarray, bool]:
    """Split by the sign of the eigenvector for the second-largest eigenvalue.

    Returns (labels in {1, 2}, degenerate) where ``degenerate`` flags a second
    eigenvalue that is numerically repeated, i.e. no block structure.
    """
    w = W_hat.entries if isinstance(W_hat, InteractionMatrix) else np.asarray(W_hat, float)
    n = w.shape[0]
    lo = max(0, n - 3)
    vals, vecs = eigh(w, subset_by_index=[lo, n - 1])
    v = vecs[:, -2]
    scale = max(abs(vals[-1]), 1e-300)
    degenerate = n >= 3 and abs(vals[-2] - vals[-3]) <= 1e-9 * scale
    # fix the sign so the result is deterministic
    pivot = np.argmax(np.abs(v))
    if v[pivot] < 0:
        v = -v
    return np.where(v > 0, 1, 2), bool(degenerate)


# -- metrics -------------------------------------------------------------------

def accuracy(labels, truth) -> float:
    """Best agreement over the two label permutations."""
    labels = np.asarray(labels)
    truth = np.asarray(truth)
    if labels.shape != truth.shape:
        raise ValueError("labels and truth differ in length")
    same = float(np.mean(labels == truth))
    swapped = float(np.mean((3 - labels) == truth))
    return max(same, swapped)


def exact_recovery(labels, truth) -> int:
    return int(accuracy(labels, truth) == 1.0)


def recovery_frequency(label_runs: Iterable[np.ndarray], truth) -> float:
    """p_t: fraction of runs with exact recovery."""
    flags = [exact_recovery(lab, truth) for lab in label_runs]
    if not flags:
        raise ValueError("no runs")
    return float(np.mean(flags))
