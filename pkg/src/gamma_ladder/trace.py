"""Trace chains, harmonic extensions, capacities, and mean jump rates.

The trace of a chain on a subset W replaces excursions through the
complement by instantaneous jumps:

    R_W(x, y) = R(x, y) + sum_{d, d'} R(x, d) G(d, d') R(d', y),

with G the inverse of the interior block of -L, i.e. the Schur complement
of the generator onto W.  Harmonic extensions and equilibrium potentials
are solved in the "probabilistic gauge": the unknowns are the potential
values themselves (bounded by the boundary data via the maximum principle)
and the matrix entries are plain jump rates, so nothing in the linear
system carries the exp(-n*F) scale even when the stationary law does.  The
scale reappears only in capacity assembly, which therefore happens in log
space:

    cap(A, B) = (1/2) sum_{x,y} pi(x) R(x,y) (u(y) - u(x))^2,

with u the equilibrium potential of (A, B).  Mean jump rates between
partition blocks are defined through the trace chain; for reversible
chains they are also pure capacity differences (polarization), which is
the route `log_mean_jump_rate` takes so that rates of order exp(-n*d) stay
computable at any n.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .chains import FiniteChain
from .errors import (
    EmptySubsetError,
    EmptyTraceSetError,
    NotReversibleError,
    OverlappingSetsError,
    SingularInteriorBlockError,
    SingularSystemError,
)
from .numerics import log_diff_of_sqrt_squared, log_sum_exp, stable_sum

logger = logging.getLogger(__name__)

DIRECT_SOLVE_CAP = 200_000  # above this many unknowns, fall back to CG
DENSE_SCHUR_CAP = 1500  # interior size for the dense Schur path


# ---------------------------------------------------------------------------
# partitions


@dataclass
class Partition:
    """Named blocks plus the remainder set Delta = states not in any block."""

    blocks: list
    remainder: list = field(default_factory=list)

    @classmethod
    def of(cls, chain: FiniteChain, blocks) -> "Partition":
        blocks = [list(b) for b in blocks]
        seen: set = set()
        for b in blocks:
            if not b:
                raise EmptySubsetError("partition blocks must be nonempty")
            overlap = seen.intersection(b)
            if overlap:
                raise OverlappingSetsError(f"states {sorted(map(repr, overlap))} appear in two blocks")
            seen.update(b)
        unknown = seen.difference(chain.states)
        if unknown:
            raise KeyError(f"unknown states in partition: {sorted(map(repr, unknown))}")
        remainder = [s for s in chain.states if s not in seen]
        return cls(blocks=blocks, remainder=remainder)

    @property
    def union(self) -> list:
        out: list = []
        for b in self.blocks:
            out.extend(b)
        return out


# ---------------------------------------------------------------------------
# harmonic extensions


@dataclass
class HarmonicSolution:
    """Solution of L u = 0 off the boundary set with prescribed boundary data."""

    values: np.ndarray
    boundary: tuple
    interior_residual: float
    solver: str

    def __getitem__(self, i: int) -> float:
        return float(self.values[i])


def _interior_solve(chain: FiniteChain, interior_idx: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, str]:
    """Solve (-L)_{interior} x = rhs in the probabilistic gauge."""
    m = len(interior_idx)
    if m == 0:
        return np.zeros((0,) + rhs.shape[1:]), "empty"
    sub = chain.rates[interior_idx][:, interior_idx]
    M = sp.diags(chain.holding[interior_idx]) - sub
    if m <= DIRECT_SOLVE_CAP:
        try:
            lu = spla.splu(M.tocsc())
        except RuntimeError as exc:
            raise SingularInteriorBlockError(str(exc)) from exc
        x = lu.solve(rhs)
        return x, "direct"
    # Large systems: conjugate gradient on the pi-symmetrized operator with
    # Jacobi preconditioning.  v = sqrt(pi) u symmetrizes -L exactly.
    half_log_pi = 0.5 * chain.log_stationary[interior_idx]
    shift = half_log_pi - half_log_pi.max()
    psi = np.exp(shift)
    D = sp.diags(psi)
    Dinv = sp.diags(1.0 / psi)
    A = (D @ M @ Dinv).tocsr()
    A = 0.5 * (A + A.T)
    precond = sp.diags(1.0 / A.diagonal())
    cols = rhs.reshape(m, -1)
    out = np.empty_like(cols)
    for k in range(cols.shape[1]):
        b = psi * cols[:, k]
        v, info = spla.cg(A, b, rtol=1e-12, atol=0.0, M=precond, maxiter=20 * m)
        if info != 0:
            raise SingularSystemError(f"conjugate gradient did not converge (info={info})")
        out[:, k] = v / psi
    return out.reshape(rhs.shape), "cg"


def harmonic_extension(chain: FiniteChain, boundary, values=None) -> HarmonicSolution:
    """Extend boundary data harmonically: (L u)(x) = 0 for x off the boundary.

    Accepts either a dict mapping boundary states to values, or a set of
    boundary states plus a parallel sequence of values.  The boundary data
    is matched exactly; interior values obey the maximum principle (checked),
    so strictly positive data yields a strictly positive extension.
    """
    if values is None:
        boundary_values = dict(boundary)
    else:
        boundary_values = dict(zip(boundary, values, strict=True))
    if not boundary_values:
        raise EmptySubsetError("harmonic_extension needs nonempty boundary data")
    boundary_idx = chain.state_indices(boundary_values.keys())
    values = np.zeros(chain.n_states)
    for s, v in boundary_values.items():
        values[chain.index[s]] = float(v)
    interior_mask = np.ones(chain.n_states, dtype=bool)
    interior_mask[boundary_idx] = False
    interior_idx = np.flatnonzero(interior_mask)
    if interior_idx.size == 0:
        return HarmonicSolution(values, tuple(boundary_idx), 0.0, "empty")

    rhs = chain.rates[interior_idx][:, boundary_idx] @ values[boundary_idx]
    x, solver = _interior_solve(chain, interior_idx, rhs)
    values[interior_idx] = x

    lu = chain.apply_generator(values)[interior_idx]
    scale = float(np.max(chain.holding[interior_idx] * np.abs(values).max())) or 1.0
    residual = float(np.max(np.abs(lu))) / scale
    if residual > 1e-9:
        logger.warning("harmonic interior residual %.3e exceeds 1e-9", residual)

    # maximum principle: interior values live between the boundary extremes
    lo, hi = min(boundary_values.values()), max(boundary_values.values())
    slack = 1e-12 * max(1.0, abs(lo), abs(hi))
    overshoot = max(lo - values[interior_idx].min(), values[interior_idx].max() - hi)
    if overshoot > slack:
        logger.warning("maximum principle violated by %.3e", overshoot)
    return HarmonicSolution(values, tuple(boundary_idx), residual, solver)


def ring_log_extension(
    chain: FiniteChain, anchor_mask: np.ndarray, anchor_log: np.ndarray
) -> tuple[np.ndarray, list]:
    """Log of the harmonic extension of positive anchor data on a cycle.

    On each arc between consecutive anchor states the extension interpolates
    the end values linearly in resistance length, so with b = exp(anchor_log)
    the interior value is u = (b_L * S + b_R * P) / R, with P, S the partial
    resistance sums toward either anchor and R = P + S.  All three are sums
    of positive terms, evaluated as log-sum-exps: log u comes out with full
    relative accuracy even where u is far below float resolution, unlike a
    solved extension whose flat-side values round to the anchor value.

    Returns (log_u, energy_terms): log_u per state (anchor entries copied
    from anchor_log) and one log Dirichlet-energy term per arc,
    log((b_L - b_R)^2 / R_arc), with same-valued arcs omitted; their
    log-sum-exp is the log Dirichlet form of the extension.
    """
    order = chain.ring_order()
    if order is None:
        raise ValueError("ring_log_extension requires a cycle-structured chain")
    if not np.any(anchor_mask):
        raise EmptySubsetError("ring_log_extension needs nonempty anchor data")
    _, m_edge = chain.ring_edge_log_conductance()
    n = len(order)
    anchors = np.flatnonzero(anchor_mask[order])
    log_u = np.asarray(anchor_log, dtype=float).copy()
    terms: list = []
    k = len(anchors)
    for t in range(k):
        s = anchors[t]
        e = anchors[(t + 1) % k]
        span = int((e - s) % n) or n
        beta_l = anchor_log[order[s]]
        beta_r = anchor_log[order[e]]
        gap2 = log_diff_of_sqrt_squared(2.0 * beta_l, 2.0 * beta_r)
        positions = np.arange(s, s + span) % n
        if span == 1:
            if gap2 > -math.inf:
                terms.append(float(m_edge[positions[0]] + gap2))
            continue
        neg_m = -m_edge[positions]
        prefix = np.logaddexp.accumulate(neg_m)
        suffix = np.logaddexp.accumulate(neg_m[::-1])[::-1]
        log_r = prefix[-1]
        interior = order[(s + np.arange(1, span)) % n]
        log_u[interior] = np.logaddexp(beta_l + suffix[1:], beta_r + prefix[:-1]) - log_r
        if gap2 > -math.inf:
            terms.append(float(gap2 - log_r))
    return log_u, terms


def equilibrium_potential(chain: FiniteChain, set_a, set_b) -> HarmonicSolution:
    """Harmonic function equal to 1 on A and 0 on B (hitting probability of A)."""
    a = list(set_a)
    b = list(set_b)
    if not a or not b:
        raise EmptySubsetError("equilibrium_potential needs nonempty A and B")
    if set(a) & set(b):
        raise OverlappingSetsError("A and B must be disjoint")
    boundary = {s: 1.0 for s in a}
    boundary.update({s: 0.0 for s in b})
    sol = harmonic_extension(chain, boundary)
    np.clip(sol.values, 0.0, 1.0, out=sol.values)
    return sol


# ---------------------------------------------------------------------------
# capacities


class WeightedGraph:
    """Undirected conductance network used for the reduced-rate computations."""

    def __init__(self, nodes, edges: dict):
        self.nodes = tuple(nodes)
        self.index = {v: i for i, v in enumerate(self.nodes)}
        self.weights = {}
        for (x, y), w in edges.items():
            if x == y:
                continue  # self-conductances carry no current
            w = float(w)
            if w < 0.0:
                raise ValueError("conductances must be nonnegative")
            if w == 0.0:
                continue
            key = (min(self.index[x], self.index[y]), max(self.index[x], self.index[y]))
            self.weights[key] = self.weights.get(key, 0.0) + w

    def laplacian(self) -> np.ndarray:
        n = len(self.nodes)
        lap = np.zeros((n, n))
        for (i, j), w in self.weights.items():
            lap[i, j] -= w
            lap[j, i] -= w
            lap[i, i] += w
            lap[j, j] += w
        return lap


def _graph_capacity(graph: WeightedGraph, set_a, set_b) -> float:
    idx_a = sorted(graph.index[v] for v in set_a)
    idx_b = sorted(graph.index[v] for v in set_b)
    if set(idx_a) & set(idx_b):
        raise OverlappingSetsError("A and B must be disjoint")
    if not idx_a:
        raise EmptySubsetError("A must be nonempty")
    if not idx_b:
        # Grounding set empty: the potential is constant and no current flows.
        return 0.0
    n = len(graph.nodes)
    u = np.zeros(n)
    u[idx_a] = 1.0
    fixed = np.zeros(n, dtype=bool)
    fixed[idx_a] = True
    fixed[idx_b] = True
    free = np.flatnonzero(~fixed)
    lap = graph.laplacian()
    if free.size:
        A = lap[np.ix_(free, free)]
        b = -lap[np.ix_(free, np.flatnonzero(fixed))] @ u[fixed]
        try:
            u[free] = np.linalg.solve(A, b)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(f"graph capacity solve failed: {exc}") from exc
    return stable_sum([w * (u[i] - u[j]) ** 2 for (i, j), w in graph.weights.items()])


def _ring_log_capacity(chain: FiniteChain, a_idx: np.ndarray, b_idx: np.ndarray) -> float:
    """Exact log capacity on a cycle via series-parallel arc resistances.

    On an arc between consecutive anchor states the potential interpolates
    linearly in resistance length, so an arc whose ends lie in different
    anchor sets contributes 1/R_arc, with R_arc the series sum of the edge
    resistances 1/(pi R); an arc with both ends in the same set carries no
    current.  Every quantity is a log-sum-exp of signs-free terms, so the
    result keeps full relative precision however small the capacity is.
    """
    order, m_edge = chain.ring_edge_log_conductance()
    n = len(order)
    tag = np.zeros(chain.n_states, dtype=int)
    tag[a_idx] = 1
    tag[b_idx] = 2
    ring_tag = tag[order]
    anchors = np.flatnonzero(ring_tag)
    terms = []
    for t, s in enumerate(anchors):
        e = anchors[(t + 1) % len(anchors)]
        if ring_tag[s] == ring_tag[e]:
            continue
        span = int((e - s) % n)
        arc = m_edge[np.arange(s, s + span) % n]
        terms.append(-log_sum_exp(-arc))
    return log_sum_exp(np.asarray(terms))


def log_capacity(chain: FiniteChain, set_a, set_b) -> float:
    """log cap(A, B); the Dirichlet energy of the equilibrium potential,
    assembled edgewise in log space so saddle-scale conductances cannot
    underflow the sum.

    Cycle-structured chains (the lattice walks this package mostly meets)
    bypass the linear solver entirely: the equilibrium potential on a cycle
    is piecewise linear in resistance length, and the capacity is the
    parallel sum of the crossing-arc conductances, all computable as
    log-sum-exps.  That matters because a solved potential is only accurate
    to about 1e-16 in absolute terms, while its true drop one step outside
    a deep well is exp(-n*(h - F)); past moderate n the rounding dirt would
    masquerade as gradient on high-mass edges and swamp a capacity of order
    exp(-n*h).

    Other topologies use that solver route: the potential is solved twice,
    once grounded at B and once at A, and each edge difference is read off
    whichever representation is small there (near A the first solution is 1
    minus a drop below float resolution; the complementary solve carries
    the drop directly).  This is reliable while exp(-n*h) stays within
    roughly eps^2 of the well-boundary mass scale, which covers the sizes
    general graphs appear at here.
    """
    if not chain.reversible:
        raise NotReversibleError("capacity requires a reversible chain")
    a = list(set_a)
    b = list(set_b)
    if not a or not b:
        raise EmptySubsetError("capacity needs nonempty A and B")
    if set(a) & set(b):
        raise OverlappingSetsError("A and B must be disjoint")
    if chain.ring_order() is not None:
        return _ring_log_capacity(chain, chain.state_indices(a), chain.state_indices(b))
    u = equilibrium_potential(chain, a, b).values
    w = equilibrium_potential(chain, b, a).values
    i, j, _, _, lr_ij, _ = chain.edge_pairs()
    near_a = np.maximum(u[i], u[j]) > 0.5
    du = np.abs(np.where(near_a, w[j] - w[i], u[j] - u[i]))
    with np.errstate(divide="ignore"):
        log_terms = chain.log_stationary[i] + lr_ij + 2.0 * np.log(du)
    return log_sum_exp(log_terms[du > 0.0])


def capacity(network, set_a, set_b) -> float:
    """cap(A, B) for a reversible chain or a weighted graph.

    Symmetric in (A, B) by construction: the pair is canonicalized before
    solving, so capacity(A, B) and capacity(B, A) return the identical
    float.
    """
    if isinstance(network, WeightedGraph):
        a, b = _canonical_pair(set_a, set_b)
        return _graph_capacity(network, a, b)
    a, b = _canonical_pair(set_a, set_b)
    return math.exp(log_capacity(network, a, b))


def _canonical_pair(set_a, set_b):
    a, b = list(set_a), list(set_b)
    if not a or not b:
        return a, b
    if repr(sorted(map(repr, a))) > repr(sorted(map(repr, b))):
        return b, a
    return a, b


# ---------------------------------------------------------------------------
# trace chains


def trace_chain(chain: FiniteChain, subset) -> FiniteChain:
    """Watched chain on W: Schur complement of the generator onto W.

    The stationary law of the trace is the original law conditioned to W
    (certified against the computed generator); reversibility is inherited.
    """
    w_states = list(subset)
    if not w_states:
        raise EmptyTraceSetError("trace set must be nonempty")
    w_idx = chain.state_indices(w_states)
    if w_idx.size < 2:
        raise EmptyTraceSetError("trace set must contain at least two states")
    mask = np.zeros(chain.n_states, dtype=bool)
    mask[w_idx] = True
    d_idx = np.flatnonzero(~mask)

    L = chain.generator_matrix()
    L_ww = L[w_idx][:, w_idx]
    if d_idx.size == 0:
        schur = L_ww.toarray()
    else:
        L_wd = L[w_idx][:, d_idx]
        L_dw = L[d_idx][:, w_idx]
        if d_idx.size <= DENSE_SCHUR_CAP:
            M = sp.diags(chain.holding[d_idx]) - chain.rates[d_idx][:, d_idx]
            try:
                X = np.linalg.solve(M.toarray(), L_dw.toarray())
            except np.linalg.LinAlgError as exc:
                raise SingularInteriorBlockError(str(exc)) from exc
            schur = L_ww.toarray() + L_wd.toarray() @ X
        else:
            X, _ = _interior_solve(chain, d_idx, L_dw.toarray())
            schur = L_ww.toarray() + L_wd.toarray() @ X

    # Off-diagonal Schur entries are nonnegative in exact arithmetic; clip
    # elimination noise.
    rates = np.clip(schur, 0.0, None)
    np.fill_diagonal(rates, 0.0)

    log_pi_w = chain.log_stationary[w_idx]
    log_pi_w = log_pi_w - log_sum_exp(log_pi_w)
    states = [chain.states[k] for k in w_idx]
    traced = FiniteChain(states, sp.csr_matrix(rates), log_pi_w, chain.reversible)

    pi_w = traced.stationary.values
    gen = traced.generator_matrix()
    resid = np.abs(pi_w @ gen)
    scale = float(np.max(pi_w * traced.holding)) or 1.0
    rel = float(resid.max()) / scale
    if rel > 1e-8:
        logger.warning("trace stationary certification residual %.3e exceeds 1e-8", rel)
    return traced


def mean_jump_rate(chain: FiniteChain, partition: Partition, i: int, j: int) -> float:
    """Average trace-rate from block i into block j,

        r(i, j) = (1 / pi(W_i)) sum_{x in W_i} pi(x) sum_{y in W_j} R_W(x, y),

    where R_W is the trace of the chain on the union of all blocks.  This is
    the defining (Schur complement) route; see log_mean_jump_rate for the
    capacity route that remains finite-precision-safe at large n.
    """
    if i == j:
        raise ValueError("block indices must differ")
    traced = trace_chain(chain, partition.union)
    return _trace_flow_rate(chain, traced, partition, i, j)


def _trace_flow_rate(chain: FiniteChain, traced: FiniteChain, partition: Partition, i: int, j: int) -> float:
    block_i = partition.blocks[i]
    block_j = partition.blocks[j]
    log_pi_full = {s: chain.log_stationary[chain.index[s]] for s in traced.states}
    log_mass_i = log_sum_exp([log_pi_full[s] for s in block_i])
    rows = traced.state_indices(block_i)
    cols = traced.state_indices(block_j)
    sub = traced.rates[rows][:, cols]
    weights = np.exp(np.array([log_pi_full[traced.states[r]] for r in rows]) - log_mass_i)
    return float(weights @ np.asarray(sub.sum(axis=1)).ravel())


def log_interwell_flow(chain: FiniteChain, partition: Partition, i: int, j: int) -> float:
    """log of Phi(i,j) = sum_{x in W_i} pi(x) R_W(x, W_j), via capacities.

    For reversible chains the flow polarizes into full-chain capacities
    between block unions:

        Phi(i,j) = (cap(W_i, rest) + cap(W_j, rest) - cap(W_i u W_j, rest)) / 2,

    each capacity taken with every other block acting as interior.  All
    three terms share the saddle exponential scale, so the difference is
    formed after factoring the common magnitude out.
    """
    if not chain.reversible:
        raise NotReversibleError("the capacity route needs a reversible chain")
    blocks = partition.blocks
    rest_i = [s for k, b in enumerate(blocks) if k != i for s in b]
    rest_j = [s for k, b in enumerate(blocks) if k != j for s in b]
    rest_ij = [s for k, b in enumerate(blocks) if k not in (i, j) for s in b]
    log_cap_i = log_capacity(chain, blocks[i], rest_i)
    log_cap_j = log_capacity(chain, blocks[j], rest_j)
    if rest_ij:
        log_cap_ij = log_capacity(chain, list(blocks[i]) + list(blocks[j]), rest_ij)
    else:
        log_cap_ij = -math.inf  # grounding set empty: zero capacity
    m = max(log_cap_i, log_cap_j)
    if m == -math.inf:
        return -math.inf
    combined = math.exp(log_cap_i - m) + math.exp(log_cap_j - m) - math.exp(log_cap_ij - m)
    if combined <= 0.0:
        return -math.inf
    return m + math.log(0.5 * combined)


def log_mean_jump_rate(chain: FiniteChain, partition: Partition, i: int, j: int) -> float:
    """log r(i,j) computed as log Phi(i,j) - log pi(W_i) (capacity route)."""
    if i == j:
        raise ValueError("block indices must differ")
    log_flow = log_interwell_flow(chain, partition, i, j)
    idx = chain.state_indices(partition.blocks[i])
    return log_flow - log_sum_exp(chain.log_stationary[idx])


def capacity_rate_bridge(chain: FiniteChain, partition: Partition, tol: float = 1e-8) -> np.ndarray:
    """Mean jump rates recomputed from capacities, checked against the trace route.

    Returns the matrix r(i,j) of capacity-route rates and asserts agreement
    with mean_jump_rate within `tol` relative on every pair.  Keeping both
    routes independent is the point: one validates the other.
    """
    k = len(partition.blocks)
    traced = trace_chain(chain, partition.union)
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            via_cap = math.exp(log_mean_jump_rate(chain, partition, i, j))
            via_trace = _trace_flow_rate(chain, traced, partition, i, j)
            out[i, j] = via_cap
            scale = max(abs(via_cap), abs(via_trace), 1e-300)
            if abs(via_cap - via_trace) / scale > tol:
                raise AssertionError(
                    f"capacity route r({i},{j})={via_cap:.15g} disagrees with "
                    f"trace route {via_trace:.15g} beyond {tol:g} relative"
                )
    return out
