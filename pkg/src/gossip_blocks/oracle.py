"""Closed-form reference quantities for the block gossip model.

Nothing here simulates. Everything is a direct evaluation of a formula or a
dense linear solve, so these functions serve as independent oracles for the
dynamics and the estimator.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .graph_model import (
    BlockGossipModel,
    CommunityAssignment,
    InteractionMatrix,
    ModelError,
    normalization_residual,
    NORMALIZATION_TOL,
)


@dataclass(frozen=True)
class MeanDynamics:
    """Expected one-tick maps: E{X^r(t+1)} = A_bar X^r(t) + B_bar x^s."""

    A_bar: np.ndarray
    B_bar: np.ndarray
    spectral_radius: float

    @property
    def stable(self) -> bool:
        return self.spectral_radius < 1.0 - 1e-12


@dataclass(frozen=True)
class StationaryProfile:
    chi1: float
    chi2: float
    delta: float
    gammas: np.ndarray
    x_r: np.ndarray

    @property
    def gap(self) -> float:
        return self.chi1 - self.chi2


@dataclass(frozen=True)
class TheoryConstants:
    t0: float
    c_A: float
    c_nr: float
    c_s: float
    c_w: float
    eta: float
    delta: float
    s_star: float

    def recovery_bound(self, t, n_r: int):
        return recovery_bound(t, self.t0, n_r)


def _spectral_radius_sym(a: np.ndarray) -> float:
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvalsh(a))))


def mean_matrices(model: BlockGossipModel) -> MeanDynamics:
    """A_bar and B_bar assembled from the block formulas (w_s within, w_d
    across, a_k = w_s n_k + w_d n_{3-k} on the diagonal)."""
    a = model.assignment
    labels = a.labels
    sizes = a.sizes()
    n = a.n
    # a_k generalizes to w_s n_k + w_d (n - n_k)
    a_k = model.w_s * sizes + model.w_d * (n - sizes)
    reg, stub = a.regular_indices, a.stubborn_indices
    lr, ls = labels[reg], labels[stub]
    p = 1.0 - model.q
    block_rr = np.where(lr[:, None] == lr[None, :], model.w_s, model.w_d)
    A_bar = np.eye(reg.size) - p * (np.diag(a_k[lr - 1]) - block_rr)
    B_bar = p * np.where(lr[:, None] == ls[None, :], model.w_s, model.w_d)
    return MeanDynamics(A_bar, B_bar, _spectral_radius_sym(A_bar))


def mean_matrices_general(W: InteractionMatrix, stubborn, q: float) -> MeanDynamics:
    """A_bar and B_bar for an arbitrary interaction matrix."""
    stubborn = np.asarray(stubborn, dtype=bool)
    reg = ~stubborn
    w = W.entries
    p = 1.0 - q
    A_bar = np.eye(int(reg.sum())) - p * (np.diag(w[reg].sum(axis=1)) - w[np.ix_(reg, reg)])
    B_bar = p * w[np.ix_(reg, stubborn)]
    return MeanDynamics(A_bar, B_bar, _spectral_radius_sym(A_bar))


def stationary_mean_solve(dyn: MeanDynamics, x_s) -> np.ndarray:
    """Solve (I - A_bar) x = B_bar x^s densely."""
    if not dyn.stable:
        raise ModelError(f"A_bar is not Schur stable (rho = {dyn.spectral_radius!r})")
    x_s = np.asarray(x_s, dtype=float)
    m = np.eye(dyn.A_bar.shape[0]) - dyn.A_bar
    rhs = dyn.B_bar @ x_s
    x = np.linalg.solve(m, rhs)
    resid = np.linalg.norm(m @ x - rhs)
    if resid > 1e-10 * max(1.0, np.linalg.norm(rhs)):
        raise ArithmeticError(f"linear solve residual {resid:.3e} too large")
    return x


def _two_community_counts(model: BlockGossipModel):
    a = model.assignment
    if a.n_communities != 2:
        raise ModelError("closed forms are for two communities")
    n1, n2 = (int(v) for v in a.sizes())
    nr1, nr2 = (int(v) for v in a.regular_sizes())
    ns1, ns2 = (int(v) for v in a.stubborn_sizes())
    return n1, n2, nr1, nr2, ns1, ns2


def delta_value(model: BlockGossipModel) -> float:
    n1, n2, nr1, nr2, ns1, ns2 = _two_community_counts(model)
    ws, wd = model.w_s, model.w_d
    return ws**2 * ns1 * ns2 + ws * wd * (n1 * ns1 + n2 * ns2) + wd**2 * (n1 * n2 - nr1 * nr2)


def closed_form_inverse(model: BlockGossipModel) -> np.ndarray:
    """(I - A_bar)^{-1} in regular-agent order from the two-community formula."""
    n1, n2, nr1, nr2, ns1, ns2 = _two_community_counts(model)
    ws, wd = model.w_s, model.w_d
    delta = delta_value(model)
    if delta <= 0:
        raise ModelError("closed form needs at least one stubborn agent")
    a1 = ws * n1 + wd * n2
    a2 = ws * n2 + wd * n1
    wt = {
        1: (ws**2 * ns2 + ws * wd * n1 + wd**2 * nr2) / delta,
        2: (ws**2 * ns1 + ws * wd * n2 + wd**2 * nr1) / delta,
    }
    ak = {1: a1, 2: a2}
    lr = model.assignment.labels[model.assignment.regular_indices]
    same = lr[:, None] == lr[None, :]
    diag_part = np.diag([1.0 / ak[c] for c in lr])
    within = np.array([wt[c] / ak[c] for c in lr])[:, None] * np.ones(lr.size)
    inv = np.where(same, within, wd / delta) + diag_part
    return inv / (1.0 - model.q)


def stationary_mean_closed_form(model: BlockGossipModel) -> StationaryProfile:
    """chi_1, chi_2 from the gamma/delta formulas and the block-constant x^r."""
    n1, n2, nr1, nr2, ns1, ns2 = _two_community_counts(model)
    if ns1 + ns2 == 0:
        raise ModelError("need at least one stubborn agent")
    ws, wd = model.w_s, model.w_d
    delta = delta_value(model)
    g11 = ws**2 * ns2 + ws * wd * n1 + wd**2 * nr2
    g22 = ws**2 * ns1 + ws * wd * n2 + wd**2 * nr1
    g12 = wd * (ws * n2 + wd * n1)
    g21 = wd * (ws * n1 + wd * n2)
    gammas = np.array([[g11, g12], [g21, g22]])
    s1, s2 = model.stubborn_sums()
    chi1 = (g11 * s1 + g12 * s2) / delta
    chi2 = (g21 * s1 + g22 * s2) / delta
    lr = model.assignment.labels[model.assignment.regular_indices]
    x_r = np.where(lr == 1, chi1, chi2).astype(float)
    return StationaryProfile(chi1, chi2, delta, gammas, x_r)


def chi_gap(model: BlockGossipModel) -> float:
    """chi_1 - chi_2 = (w_s^2 - w_d^2)(n_s2 1'x^{s1} - n_s1 1'x^{s2}) / delta."""
    _, _, _, _, ns1, ns2 = _two_community_counts(model)
    s1, s2 = model.stubborn_sums()
    return (model.w_s**2 - model.w_d**2) * (ns2 * s1 - ns1 * s2) / delta_value(model)


def moment_system(model: BlockGossipModel, chi1: float, chi2: float):
    """The 2x2 linear system whose unique solution is (w_s, w_d)."""
    n1, n2, nr1, nr2, ns1, ns2 = _two_community_counts(model)
    s1, s2 = model.stubborn_sums()
    m = np.array(
        [
            [ns1 * chi1 - s1, n2 * chi1 - nr2 * chi2 - s2],
            [n1 * (n1 - 1) + n2 * (n2 - 1), 2.0 * n1 * n2],
        ]
    )
    return m, np.array([0.0, 2.0])


def moment_solve(model: BlockGossipModel, chi1: float, chi2: float) -> tuple[float, float]:
    """Closed-form reference estimator: solve the system at given chi values."""
    m, rhs = moment_system(model, chi1, chi2)
    ws, wd = np.linalg.solve(m, rhs)
    return float(ws), float(wd)


def moment_residual(model: BlockGossipModel) -> float:
    prof = stationary_mean_closed_form(model)
    m, rhs = moment_system(model, prof.chi1, prof.chi2)
    return float(np.max(np.abs(m @ np.array([model.w_s, model.w_d]) - rhs)))


# -- multiple communities ---------------------------------------------------

def _activity(sizes, w_s, w_d) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=float)
    return w_s * sizes + w_d * (sizes.sum() - sizes)


def d_A(subset, n_r, a, w_s, w_d) -> float:
    """Signed sum over increasing tuples of ``subset``; d_A(empty) = 1."""
    members = sorted(subset)
    total = 0.0
    for p in range(len(members) + 1):
        coef = (w_d - w_s) ** (p - 1) * (w_s + (p - 1) * w_d)
        inner = 0.0
        for tup in itertools.combinations(members, p):
            inner += math.prod(n_r[j] / a[j] for j in tup)
        total += coef * inner
    return -total


def e_A(subset, n_r, a, w_s, w_d) -> float:
    """Product over ``subset`` of 1 + (w_d - w_s) n_rp / a_p; e_A(empty) = 1."""
    return math.prod(1.0 + (w_d - w_s) * n_r[p] / a[p] for p in subset)


def multi_community_inverse(assignment: CommunityAssignment, w_s: float, w_d: float, q: float):
    """((I - A_bar)^{-1}, (I - A_bar)^{-1} B_bar) for K >= 2 communities from
    the combinatorial block formulas. Rows follow the canonical sorted order
    (community, then regular agents); columns of the second matrix follow the
    stubborn agents in the same order."""
    K = assignment.n_communities
    if K < 2:
        raise ModelError("need at least two communities")
    if assignment.n_s == 0:
        raise ModelError("need at least one stubborn agent")
    if w_s <= 0 or w_d <= 0 or w_s == w_d:
        raise ModelError("need positive, distinct w_s and w_d")
    if not 0 <= q < 1:
        raise ModelError("q must lie in [0, 1)")
    sizes = assignment.sizes()
    res, scale = normalization_residual(sizes, w_s, w_d)
    if abs(res) > NORMALIZATION_TOL * scale:
        raise ModelError(f"pair probabilities do not sum to one (residual {res:.3e})")
    n_r = [int(v) for v in assignment.regular_sizes()]
    n_s = [int(v) for v in assignment.stubborn_sizes()]
    a = _activity(sizes, w_s, w_d)
    everyone = list(range(K))
    d_full = d_A(everyone, n_r, a, w_s, w_d)

    inv_blocks = [[None] * K for _ in range(K)]
    invb_blocks = [[None] * K for _ in range(K)]
    for i in range(K):
        d_wo_i = d_A([k for k in everyone if k != i], n_r, a, w_s, w_d)
        for j in range(K):
            if i == j:
                inv_blocks[i][j] = (
                    np.eye(n_r[i]) - (1.0 - d_wo_i / d_full) / n_r[i] * np.ones((n_r[i], n_r[i]))
                ) / a[i]
                invb_blocks[i][j] = (d_wo_i / d_full - 1.0) / n_r[i] * np.ones((n_r[i], n_s[j]))
            else:
                e = e_A([k for k in everyone if k not in (i, j)], n_r, a, w_s, w_d)
                inv_blocks[i][j] = w_d * e / (a[i] * a[j] * d_full) * np.ones((n_r[i], n_r[j]))
                invb_blocks[i][j] = w_d * e / (a[i] * d_full) * np.ones((n_r[i], n_s[j]))
    inv = np.block(inv_blocks) / (1.0 - q)
    invb = np.block(invb_blocks)
    return inv, invb


def canonical_regular_order(assignment: CommunityAssignment) -> np.ndarray:
    """Positions within the regular-agent vector, sorted by community."""
    lr = assignment.labels[assignment.regular_indices]
    return np.argsort(lr, kind="stable")


def canonical_stubborn_order(assignment: CommunityAssignment) -> np.ndarray:
    ls = assignment.labels[assignment.stubborn_indices]
    return np.argsort(ls, kind="stable")


# -- theory constants ---------------------------------------------------------

def s_star(model: BlockGossipModel, rho: float | None = None) -> float:
    """Analytic bound 2 sqrt(n_r) max(|s_lo|, |s_hi|) / (1 - rho(A_bar))."""
    if rho is None:
        rho = mean_matrices(model).spectral_radius
    lo, hi = model.state_box()
    return 2.0 * math.sqrt(model.assignment.n_r) * max(abs(lo), abs(hi)) / (1.0 - rho)


def convergence_rate_eta(model: BlockGossipModel) -> float:
    n1, n2, _, _, ns1, ns2 = _two_community_counts(model)
    s1, s2 = model.stubborn_sums()
    return (
        (model.w_s * n2 + model.w_d * n1) * (ns1 * s2 - ns2 * s1)
        / (delta_value(model) * n1 * n2)
    )


def rate_ceiling(eta: float, a: float) -> float:
    """Supremum of admissible exponents d_0: min(1/2, a |eta|)."""
    return min(0.5, a * abs(eta))


def sample_complexity_t0(model: BlockGossipModel) -> TheoryConstants:
    n1, n2, nr1, nr2, ns1, ns2 = _two_community_counts(model)
    s1, s2 = model.stubborn_sums()
    denom = abs(ns1 * s2 - ns2 * s1)
    if ns1 * ns2 == 0 or denom == 0:
        raise ModelError("community-mean stubborn states must differ (c_s undefined)")
    rho = mean_matrices(model).spectral_radius
    n_r = nr1 + nr2
    lo, hi = model.state_box()
    c_A = 1.0 / (1.0 - rho)
    c_nr = n_r**1.5 * (n_r + 1)
    c_s = max(abs(lo), abs(hi)) / denom
    c_w = abs(model.w_s**2 - model.w_d**2)
    delta = delta_value(model)
    t0 = 4.0 * delta * c_A * c_nr * c_s / c_w
    return TheoryConstants(
        t0=t0, c_A=c_A, c_nr=c_nr, c_s=c_s, c_w=c_w,
        eta=convergence_rate_eta(model), delta=delta, s_star=s_star(model, rho),
    )


def recovery_bound(t, t0: float, n_r: int):
    """Lower bound on P{exact recovery at t}, clamped to [0, 1]; 0 for t <= t0."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = 1.0 - 2.0 * n_r * np.exp(-2.0 * (t - t0) ** 2 / (t0**2 * t))
    out = np.where(t > t0, np.clip(raw, 0.0, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def concentration_threshold(model: BlockGossipModel) -> float:
    """2 s_* / eps_0 with eps_0 = |chi_1 - chi_2| / (2 n_r (n_r + 1)): the time
    after which the per-agent concentration bound applies. Equals 2 * t0."""
    n_r = model.assignment.n_r
    eps0 = abs(chi_gap(model)) / (2.0 * n_r * (n_r + 1))
    return 2.0 * s_star(model) / eps0


def hoeffding_chain_bound(epsilon: float, t: float, g_sup: float) -> float:
    """2 exp(-(t eps - 2 g)^2 / (2 t g^2)) for t > 2 g / eps (not clamped)."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if g_sup == 0:
        return 0.0
    if t <= 2.0 * g_sup / epsilon:
        raise ValueError(f"t must exceed 2 g_sup / epsilon = {2.0 * g_sup / epsilon!r}")
    return 2.0 * math.exp(-((t * epsilon - 2.0 * g_sup) ** 2) / (2.0 * t * g_sup**2))


def _is_primitive(P: np.ndarray) -> bool:
    n = P.shape[0]
    ncomp, _ = connected_components(P > 0, directed=True, connection="strong")
    if ncomp != 1:
        return False
    # Wielandt: primitive iff M^{(n-1)^2 + 1} > 0
    m = (P > 0).astype(np.int64)
    power = (n - 1) ** 2 + 1
    acc = np.eye(n, dtype=np.int64)
    base = m
    while power:
        if power & 1:
            acc = (acc @ base > 0).astype(np.int64)
        base = (base @ base > 0).astype(np.int64)
        power >>= 1
    return bool(acc.all())


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    n = P.shape[0]
    m = np.vstack([np.eye(n) - P.T, np.ones(n)])
    rhs = np.r_[np.zeros(n), 1.0]
    pi, *_ = np.linalg.lstsq(m, rhs, rcond=None)
    return pi


def fundamental_g(P, f) -> tuple[float, np.ndarray]:
    """(alpha, g) with alpha = pi'f and g = sum_t (P^t f - alpha 1), computed
    from (I - P + 1 pi') g = f - alpha 1."""
    P = np.asarray(P, dtype=float)
    f = np.asarray(f, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or f.shape != (P.shape[0],):
        raise ValueError("P must be square and f must match its size")
    if (P < 0).any() or not np.allclose(P.sum(axis=1), 1.0, atol=1e-12):
        raise ValueError("P must be row-stochastic")
    if not _is_primitive(P):
        raise ValueError("chain must be irreducible and aperiodic")
    n = P.shape[0]
    pi = stationary_distribution(P)
    alpha = float(pi @ f)
    Z = np.linalg.inv(np.eye(n) - P + np.outer(np.ones(n), pi))
    g = Z @ (f - alpha)
    return alpha, g


def oracle_report(model: BlockGossipModel) -> dict:
    """Summary used by the ``oracle`` CLI command."""
    dyn = mean_matrices(model)
    prof = stationary_mean_closed_form(model)
    report = {
        "chi1": prof.chi1,
        "chi2": prof.chi2,
        "delta": prof.delta,
        "rho_A": dyn.spectral_radius,
        "t0": None,
        "eta": convergence_rate_eta(model),
        "sstar": s_star(model, dyn.spectral_radius),
        "eq12_check_residual": moment_residual(model),
    }
    try:
        report["t0"] = sample_complexity_t0(model).t0
    except ModelError:
        pass
    return report


def chain_time_averages(P, f, t: int, runs: int, seed, x0: int | None = None) -> np.ndarray:
    """S_f(t) = (1/t) sum_{i<t} f(X(i)) for ``runs`` independent copies of a
    finite chain; X(0) = ``x0`` or a draw from the stationary law."""
    P = np.asarray(P, dtype=float)
    f = np.asarray(f, dtype=float)
    rng = np.random.Generator(np.random.PCG64(seed))
    n = P.shape[0]
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    if x0 is None:
        pi = np.clip(stationary_distribution(P), 0.0, None)
        state = rng.choice(n, size=runs, p=pi / pi.sum())
    else:
        state = np.full(runs, int(x0))
    total = np.zeros(runs)
    for _ in range(t):
        total += f[state]
        u = rng.random(runs)
        state = (u[:, None] >= cum[state]).sum(axis=1)
    return total / t
