"""Finite-state continuous-time chains and their occupation-measure functionals.

A chain is specified by jump rates R(x,y) >= 0; the generator acts as

    (L f)(x) = sum_y R(x,y) (f(y) - f(x)).

The level-two rate functional of an occupation measure mu is

    I(mu) = sup_{u > 0} -sum_x mu(x) (L u)(x) / u(x),

and for reversible chains it collapses to the closed edge form

    I(mu) = sum_{{x,y}} ( sqrt(mu(x) R(x,y)) - sqrt(mu(y) R(y,x)) )^2,

one term per unordered pair.  The edge form needs only rates and mu, so it
survives stationary weights far below float64 range; a log-space twin is
provided for measures handed around as log weights.

Stationary distributions are computed in log space when detailed balance
holds (spanning-tree propagation of log rate ratios, checked against the
Kolmogorov cycle condition on every off-tree edge) and by a null-space solve
otherwise.  Normalized probabilities below 1e-300 are flushed to exact zero
with a logged warning; their log values are kept exactly.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .errors import (
    DisconnectedSubsetError,
    EmptySubsetError,
    NegativeRateError,
    NonPositiveTestFunctionError,
    NotIrreducibleError,
    NotReversibleError,
    SingularSystemError,
    TooLargeError,
)
from .numerics import (
    FLUSH_THRESHOLD,
    log_diff_of_sqrt_squared,
    log_sum_exp,
    stable_sum,
)

logger = logging.getLogger(__name__)

BALANCE_TOL = 1e-10  # cycle-condition / detailed-balance certification
EXACT_H5_CAP = 2000  # dense generalized-eigenvalue routine size cap


# ---------------------------------------------------------------------------
# measures


class ProbabilityMeasure:
    """A probability measure on an ordered state set.

    Carries linear weights (flushed below 1e-300) and, when known, exact log
    weights; functionals that must survive huge dynamic range prefer the
    latter.
    """

    def __init__(self, states, values, log_values=None, normalize: bool = False):
        self.states = tuple(states)
        values = np.asarray(values, dtype=float).copy()
        if values.shape != (len(self.states),):
            raise ValueError("values must align with states")
        if np.any(values < 0.0):
            raise ValueError("measure weights must be nonnegative")
        if normalize:
            total = stable_sum(values)
            if total <= 0.0:
                raise ValueError("cannot normalize a zero measure")
            values = values / total
            if log_values is not None:
                log_values = np.asarray(log_values, dtype=float) - math.log(total)
        self.values = values
        if log_values is None:
            with np.errstate(divide="ignore"):
                log_values = np.log(values)
        self.log_values = np.asarray(log_values, dtype=float)
        self._index = {s: i for i, s in enumerate(self.states)}

    @classmethod
    def from_dict(cls, weights: dict, states=None) -> "ProbabilityMeasure":
        if states is None:
            states = list(weights.keys())
        values = [float(weights.get(s, 0.0)) for s in states]
        return cls(states, values)

    @classmethod
    def from_log_weights(cls, states, log_w) -> "ProbabilityMeasure":
        """Build a normalized measure from unnormalized log weights."""
        log_w = np.asarray(log_w, dtype=float)
        log_z = log_sum_exp(log_w)
        if log_z == -math.inf:
            raise ValueError("cannot normalize a zero measure")
        log_vals = log_w - log_z
        vals = np.exp(log_vals)
        flushed = (vals > 0.0) & (vals < FLUSH_THRESHOLD)
        if np.any(flushed):
            # routine for sharply concentrated Gibbs laws; log values keep
            # the full information, so this is not worth a warning
            logger.debug(
                "flushed %d probabilities below %g to zero", int(flushed.sum()), FLUSH_THRESHOLD
            )
            vals = np.where(flushed, 0.0, vals)
        return cls(states, vals, log_values=log_vals)

    def __getitem__(self, state) -> float:
        return float(self.values[self._index[state]])

    def __len__(self) -> int:
        return len(self.states)

    def items(self):
        for s, v in zip(self.states, self.values):
            yield s, float(v)

    def total(self) -> float:
        return stable_sum(self.values)

    def align(self, states) -> np.ndarray:
        """Weights reordered to the given state sequence (zero off support)."""
        return np.array([self.values[self._index[s]] if s in self._index else 0.0 for s in states])

    def to_json_dict(self) -> dict:
        return {"weights": {_state_key(s): float(v) for s, v in self.items()}}

    @classmethod
    def from_json_dict(cls, payload: dict, states=None) -> "ProbabilityMeasure":
        raw = payload["weights"]
        if states is None:
            weights = {_parse_state_key(k): float(v) for k, v in raw.items()}
            return cls.from_dict(weights)
        weights = {s: float(raw.get(_state_key(s), 0.0)) for s in states}
        return cls.from_dict(weights, states=states)


def _state_key(state) -> str:
    return state if isinstance(state, str) else json.dumps(state)


def _parse_state_key(key: str):
    try:
        return json.loads(key)
    except (ValueError, TypeError):
        return key


# ---------------------------------------------------------------------------
# chains


class FiniteChain:
    """Irreducible finite-state chain with cached edge structure.

    Attributes
    ----------
    states : tuple of state identifiers
    rates : csr_matrix of jump rates (no diagonal)
    holding : holding[i] = sum_j rates[i, j]
    stationary : ProbabilityMeasure (linear weights, flushed below 1e-300)
    log_stationary : exact log stationary weights, aligned with states
    reversible : True when detailed balance was certified
    site_coordinates : optional array of embedded positions (lattice chains)
    """

    def __init__(
        self,
        states,
        rates: sp.csr_matrix,
        log_stationary: np.ndarray,
        reversible: bool,
        site_coordinates: np.ndarray | None = None,
    ):
        self.states = tuple(states)
        self.n_states = len(self.states)
        self.index = {s: i for i, s in enumerate(self.states)}
        rates = rates.tocsr()
        rates.eliminate_zeros()
        rates.sort_indices()
        self.rates = rates
        self.holding = np.asarray(rates.sum(axis=1)).ravel()
        self.log_stationary = np.asarray(log_stationary, dtype=float)
        self.stationary = ProbabilityMeasure.from_log_weights(self.states, self.log_stationary)
        self.log_stationary = self.stationary.log_values  # normalized
        self.reversible = bool(reversible)
        self.site_coordinates = site_coordinates
        self._pairs = None
        self._ring = -1  # unset; None once checked and refuted

    # -- derived structure -------------------------------------------------

    @property
    def jump_probabilities(self) -> sp.csr_matrix:
        inv = sp.diags(1.0 / self.holding)
        return (inv @ self.rates).tocsr()

    def state_indices(self, subset) -> np.ndarray:
        """Sorted integer indices of a collection of state ids."""
        try:
            idx = sorted(self.index[s] for s in subset)
        except KeyError as exc:
            raise KeyError(f"unknown state {exc.args[0]!r}") from None
        return np.asarray(idx, dtype=int)

    def edge_pairs(self):
        """Unordered support pairs (i < j) with both directed rates.

        Returns arrays (i, j, r_ij, r_ji, log_r_ij, log_r_ji) covering the
        symmetrized support; absent directions carry rate zero.
        """
        if self._pairs is None:
            pattern = (self.rates + self.rates.T).tocoo()
            mask = pattern.row < pattern.col
            i = pattern.row[mask]
            j = pattern.col[mask]
            r_ij = np.asarray(self.rates[i, j]).ravel()
            r_ji = np.asarray(self.rates[j, i]).ravel()
            with np.errstate(divide="ignore"):
                lr_ij = np.log(r_ij)
                lr_ji = np.log(r_ji)
            self._pairs = (i, j, r_ij, r_ji, lr_ij, lr_ji)
        return self._pairs

    def ring_order(self) -> np.ndarray | None:
        """Cyclic state order when the support graph is a single cycle.

        Returns indices ``order`` with consecutive entries (wrapping) exactly
        the support edges, or None for any other topology.  Potential-theoretic
        quantities on a cycle reduce to arc resistances, which stay accurate in
        log space long after direct linear solves drown in rounding noise, so
        several routines special-case this shape.
        """
        if isinstance(self._ring, int):
            self._ring = self._build_ring_order()
        return self._ring

    def _build_ring_order(self) -> np.ndarray | None:
        if self.n_states < 3:
            return None
        pattern = (self.rates + self.rates.T).tocsr()
        indptr, indices = pattern.indptr, pattern.indices
        if np.any(np.diff(indptr) != 2):
            return None
        order = np.empty(self.n_states, dtype=int)
        order[0] = 0
        prev, here = -1, 0
        for step in range(1, self.n_states):
            a, b = indices[indptr[here]], indices[indptr[here] + 1]
            nxt = b if a == prev else a
            if nxt == 0:
                return None  # closed early: support is not one cycle
            order[step] = nxt
            prev, here = here, nxt
        a, b = indices[indptr[here]], indices[indptr[here] + 1]
        if prev not in (a, b) or 0 not in (a, b):
            return None
        return order

    def ring_edge_log_conductance(self) -> tuple[np.ndarray, np.ndarray] | None:
        """(order, m) for cycle chains: m[t] = log sqrt(pi R pi R) on edge t.

        Edge t joins order[t] to order[t+1] (cyclically); m_t symmetrizes
        log(pi(x) R(x,y)) under detailed balance.  None when the support
        graph is not a single cycle.
        """
        order = self.ring_order()
        if order is None:
            return None
        i, j, _, _, lr_ij, lr_ji = self.edge_pairs()
        lp = self.log_stationary
        m = 0.5 * (lp[i] + lr_ij + lp[j] + lr_ji)
        lookup = {(a, b): v for a, b, v in zip(i, j, m)}
        n = len(order)
        out = np.empty(n)
        for t in range(n):
            x, y = int(order[t]), int(order[(t + 1) % n])
            out[t] = lookup[(x, y) if x < y else (y, x)]
        return order, out

    def generator_matrix(self) -> sp.csr_matrix:
        return (self.rates - sp.diags(self.holding)).tocsr()

    def apply_generator(self, f: np.ndarray) -> np.ndarray:
        return self.rates @ f - self.holding * f

    def measure(self, weights) -> ProbabilityMeasure:
        """Coerce dict / array / ProbabilityMeasure to a measure on this chain."""
        if isinstance(weights, ProbabilityMeasure):
            if weights.states == self.states:
                return weights
            return ProbabilityMeasure(self.states, weights.align(self.states))
        if isinstance(weights, dict):
            return ProbabilityMeasure.from_dict(weights, states=self.states)
        return ProbabilityMeasure(self.states, np.asarray(weights, dtype=float))

    def __repr__(self) -> str:
        tag = "reversible" if self.reversible else "non-reversible"
        return f"FiniteChain({self.n_states} states, {self.rates.nnz} rates, {tag})"


def build_chain(states, rates, balance_tol: float = BALANCE_TOL) -> FiniteChain:
    """Assemble a chain from (x, y, rate) triples and certify its stationary law.

    The positive-rate digraph must be strongly connected.  When the support
    is symmetric and the Kolmogorov cycle condition holds on every off-tree
    edge (within `balance_tol` in log scale), the stationary weights are
    propagated exactly in log space along a spanning tree and the chain is
    flagged reversible; otherwise a null-space solve is used.
    """
    states = list(states)
    if len(states) < 2:
        raise NotIrreducibleError("a chain needs at least two states")
    if len(set(states)) != len(states):
        raise ValueError("duplicate state identifiers")
    index = {s: k for k, s in enumerate(states)}
    n = len(states)

    if isinstance(rates, dict):
        triples = [(x, y, v) for (x, y), v in rates.items()]
    else:
        triples = [(x, y, v) for x, y, v in rates]
    rows, cols, vals = [], [], []
    for x, y, v in triples:
        v = float(v)
        if v < 0.0:
            raise NegativeRateError(f"rate({x!r}, {y!r}) = {v} is negative")
        if x == y:
            if v != 0.0:
                raise ValueError("self-rates are not allowed")
            continue
        if v == 0.0:
            continue
        rows.append(index[x])
        cols.append(index[y])
        vals.append(v)
    R = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    R.sum_duplicates()

    n_comp, _ = connected_components(R, directed=True, connection="strong")
    if n_comp != 1:
        raise NotIrreducibleError(
            f"positive-rate digraph has {n_comp} strongly connected components"
        )

    log_pi, reversible = _stationary_log_weights(R, balance_tol)
    return FiniteChain(states, R, log_pi, reversible)


def _stationary_log_weights(R: sp.csr_matrix, tol: float) -> tuple[np.ndarray, bool]:
    n = R.shape[0]
    pattern_sym = _support_symmetric(R)
    if pattern_sym:
        log_w = _tree_log_weights(R)
        if _cycle_condition_holds(R, log_w, tol):
            return log_w - log_sum_exp(log_w), True
    pi = _null_space_stationary(R)
    return np.log(pi), False


def _support_symmetric(R: sp.csr_matrix) -> bool:
    diff = (R != 0).astype(np.int8) - (R.T != 0).astype(np.int8)
    return diff.nnz == 0


def _tree_log_weights(R: sp.csr_matrix) -> np.ndarray:
    """Propagate log pi along a BFS tree: log pi(y) - log pi(x) = log R(x,y)/R(y,x)."""
    n = R.shape[0]
    order, pred = breadth_first_order(R, i_start=0, directed=False, return_predecessors=True)
    log_w = np.zeros(n)
    for node in order[1:]:
        parent = pred[node]
        log_w[node] = log_w[parent] + math.log(R[parent, node]) - math.log(R[node, parent])
    return log_w


def _cycle_condition_holds(R: sp.csr_matrix, log_w: np.ndarray, tol: float) -> bool:
    coo = R.tocoo()
    mask = coo.row < coo.col
    i, j = coo.row[mask], coo.col[mask]
    r_ij = coo.data[mask]
    r_ji = np.asarray(R[j, i]).ravel()
    resid = log_w[i] + np.log(r_ij) - log_w[j] - np.log(r_ji)
    return bool(np.all(np.abs(resid) <= tol))


def _null_space_stationary(R: sp.csr_matrix) -> np.ndarray:
    """Solve pi^T L = 0, sum pi = 1 by replacing one equation with normalization."""
    n = R.shape[0]
    L = R - sp.diags(np.asarray(R.sum(axis=1)).ravel())
    A = L.T.tolil()
    A[0, :] = 1.0
    b = np.zeros(n)
    b[0] = 1.0
    if n <= 4000:
        pi = np.linalg.solve(A.toarray(), b)
    else:
        pi = sp.linalg.spsolve(A.tocsc(), b)
    if np.any(pi <= 0.0):
        floor = np.min(pi)
        if floor < -1e-12:
            raise NotIrreducibleError("stationary solve produced negative mass")
        pi = np.clip(pi, 1e-300, None)
    return pi / stable_sum(pi)


# ---------------------------------------------------------------------------
# serialization


def chain_to_json(chain: FiniteChain) -> dict:
    coo = chain.rates.tocoo()
    order = np.lexsort((coo.col, coo.row))
    triples = [
        [_jsonable(chain.states[coo.row[k]]), _jsonable(chain.states[coo.col[k]]), float(coo.data[k])]
        for k in order
    ]
    return {"states": [_jsonable(s) for s in chain.states], "rates": triples}


def chain_from_json(payload: dict) -> FiniteChain:
    states = [_unjsonable(s) for s in payload["states"]]
    rates = [(_unjsonable(x), _unjsonable(y), float(v)) for x, y, v in payload["rates"]]
    return build_chain(states, rates)


def _jsonable(state):
    return list(state) if isinstance(state, tuple) else state


def _unjsonable(state):
    return tuple(state) if isinstance(state, list) else state


# ---------------------------------------------------------------------------
# Dirichlet form and the rate functional


def _subset_conditioned_log_pi(chain: FiniteChain, idx: np.ndarray) -> np.ndarray:
    log_pi = chain.log_stationary[idx]
    return log_pi - log_sum_exp(log_pi)


def dirichlet_form(chain: FiniteChain, subset, h) -> float:
    """Restricted Dirichlet form

        D(A, h) = (1/2) sum_{x in A} sum_{y in A, y != x}
                  pi_A(x) R(x,y) (h(y) - h(x))^2

    with pi_A the stationary law conditioned to A (computed in log space, so
    subsets of steep lattice chains do not underflow).
    """
    idx = chain.state_indices(subset)
    if idx.size == 0:
        raise EmptySubsetError("dirichlet_form needs a nonempty subset")
    h_arr = _function_on(chain, h)
    pi_a = np.zeros(chain.n_states)
    pi_a[idx] = np.exp(_subset_conditioned_log_pi(chain, idx))
    member = np.zeros(chain.n_states, dtype=bool)
    member[idx] = True
    coo = chain.rates.tocoo()
    mask = member[coo.row] & member[coo.col]
    contrib = pi_a[coo.row[mask]] * coo.data[mask] * (h_arr[coo.col[mask]] - h_arr[coo.row[mask]]) ** 2
    return 0.5 * stable_sum(contrib)


def rate_functional(chain: FiniteChain, mu) -> float:
    """Closed-form level-two rate functional of a reversible chain,

        I(mu) = sum over unordered pairs {x,y} of
                ( sqrt(mu(x) R(x,y)) - sqrt(mu(y) R(y,x)) )^2.

    Pairs where both endpoints carry zero mass contribute zero; a pair with
    exactly one zero endpoint contributes the surviving mu(x) R(x,y).
    """
    if not chain.reversible:
        raise NotReversibleError("rate_functional requires a reversible chain")
    mu_arr = chain.measure(mu).values
    i, j, r_ij, r_ji, _, _ = chain.edge_pairs()
    terms = (np.sqrt(mu_arr[i] * r_ij) - np.sqrt(mu_arr[j] * r_ji)) ** 2
    return stable_sum(terms)


def log_rate_functional(chain: FiniteChain, log_mu: np.ndarray) -> float:
    """log I(mu) for mu given as log weights; exact far below float64 range."""
    if not chain.reversible:
        raise NotReversibleError("rate_functional requires a reversible chain")
    log_mu = np.asarray(log_mu, dtype=float)
    i, j, _, _, lr_ij, lr_ji = chain.edge_pairs()
    with np.errstate(invalid="ignore"):
        log_terms = log_diff_of_sqrt_squared(log_mu[i] + lr_ij, log_mu[j] + lr_ji)
    return log_sum_exp(log_terms)


def log_rate_functional_from_density(chain: FiniteChain, log_density) -> float:
    """log I(mu) for mu = e^h pi / Z, parametrized by h = log(d mu / d pi) + const.

    Reversible chains only.  Each edge weight is the geometric mean of
    pi(x)R(x,y) and pi(y)R(y,x) (equal under detailed balance up to
    rounding), while the density enters through differences of h alone.  A
    constant h therefore gives exactly -inf, i.e. I(pi) = 0, where the
    generic log form would amplify detailed-balance rounding noise by the
    full exp(n*F) dynamic range.  The normalization Z = sum e^h pi is
    applied internally, so h may carry any additive constant.
    """
    if not chain.reversible:
        raise NotReversibleError("rate_functional requires a reversible chain")
    h = np.asarray(log_density, dtype=float)
    i, j, _, _, lr_ij, lr_ji = chain.edge_pairs()
    lp = chain.log_stationary
    m = 0.5 * (lp[i] + lr_ij + lp[j] + lr_ji)
    log_z = log_sum_exp(h + lp)
    with np.errstate(invalid="ignore"):
        log_terms = m + log_diff_of_sqrt_squared(h[i], h[j])
    return log_sum_exp(log_terms) - log_z


def variational_value(chain: FiniteChain, mu, u) -> float:
    """-sum_x mu(x) (L u)(x) / u(x) for a strictly positive test function u.

    Any u gives a lower bound on the rate functional; u = sqrt(mu/pi)
    attains it on reversible chains.
    """
    u_arr = _function_on(chain, u)
    if np.any(u_arr <= 0.0):
        raise NonPositiveTestFunctionError("test function must be strictly positive")
    mu_arr = chain.measure(mu).values
    lu = chain.apply_generator(u_arr)
    return -stable_sum(mu_arr * lu / u_arr)


def _function_on(chain: FiniteChain, h) -> np.ndarray:
    if isinstance(h, dict):
        return np.array([float(h.get(s, 0.0)) for s in chain.states])
    arr = np.asarray(h, dtype=float)
    if arr.shape != (chain.n_states,):
        raise ValueError("function array must align with chain states")
    return arr


# ---------------------------------------------------------------------------
# spectral-gap surrogates for the separation hypothesis


def _induced_edges(chain: FiniteChain, idx: np.ndarray):
    member = np.zeros(chain.n_states, dtype=bool)
    member[idx] = True
    coo = chain.rates.tocoo()
    mask = member[coo.row] & member[coo.col]
    return coo.row[mask], coo.col[mask], coo.data[mask]


def _subset_connected(idx: np.ndarray, rows, cols) -> bool:
    pos = {g: k for k, g in enumerate(idx)}
    m = len(idx)
    adj = sp.coo_matrix(
        (np.ones(len(rows)), ([pos[r] for r in rows], [pos[c] for c in cols])), shape=(m, m)
    )
    n_comp, _ = connected_components(adj, directed=False)
    return n_comp == 1


def poincare_path_bound(chain: FiniteChain, subset) -> float:
    """Path-coupling bound 2 * diam(A) * max over edges of 1 / c(x,y),

    where c(x,y) = pi_A(x) R(x,y) and diam is the graph diameter of the
    induced subgraph.  Dominates the exact constant returned by
    exact_h5_constant; both scale like 1/kappa under rate scaling.
    """
    return math.exp(log_poincare_path_bound(chain, subset))


def log_poincare_path_bound(chain: FiniteChain, subset) -> float:
    """log of poincare_path_bound, immune to overflow of exp(n*eps) factors."""
    idx = chain.state_indices(subset)
    if idx.size == 0:
        raise EmptySubsetError("poincare_path_bound needs a nonempty subset")
    if idx.size == 1:
        return -math.inf  # single point: no variance, bound degenerates to 0
    rows, cols, vals = _induced_edges(chain, idx)
    if len(rows) == 0 or not _subset_connected(idx, rows, cols):
        raise DisconnectedSubsetError("subset does not induce a connected subgraph")
    log_pi_a = np.full(chain.n_states, -np.inf)
    log_pi_a[idx] = _subset_conditioned_log_pi(chain, idx)
    log_c = log_pi_a[rows] + np.log(vals)
    diam = _graph_diameter(idx, rows, cols)
    return math.log(2.0 * diam) + float(np.max(-log_c))


def _graph_diameter(idx: np.ndarray, rows, cols) -> int:
    pos = {g: k for k, g in enumerate(idx)}
    m = len(idx)
    adj = sp.coo_matrix(
        (np.ones(len(rows)), ([pos[r] for r in rows], [pos[c] for c in cols])), shape=(m, m)
    ).tocsr()
    diam = 0
    for start in range(m):
        order, preds = breadth_first_order(adj, start, directed=False, return_predecessors=True)
        depth = np.zeros(m, dtype=int)
        for node in order[1:]:
            depth[node] = depth[preds[node]] + 1
        diam = max(diam, int(depth.max()))
    return diam


def _ring_arc_positions(order: np.ndarray, idx: np.ndarray) -> np.ndarray | None:
    """idx as one contiguous run of ring positions (wrap allowed), else None."""
    n = len(order)
    pos_of = np.empty(n, dtype=int)
    pos_of[order] = np.arange(n)
    pos = np.sort(pos_of[idx])
    if len(pos) == n:
        return None
    gaps = np.flatnonzero(np.diff(pos) != 1)
    wrap_closed = (pos[0] + n - pos[-1]) == 1
    if len(gaps) + (0 if wrap_closed else 1) != 1:
        return None
    if len(gaps) == 1:
        start = gaps[0] + 1
        return np.concatenate([pos[start:], pos[:start]])
    return pos


def _arc_h5_constant(chain: FiniteChain, order, m_edge, run, candidates) -> float:
    """Anchor scan on an arc of a cycle, with the grounded Green matrix
    written down directly.

    Grounding the path Laplacian at the anchor splits it into two arms; the
    inverse is G(i, j) = (series resistance from the anchor to the nearer of
    i, j) on a common arm and 0 across arms.  Every entry is a log-sum-exp
    of edge resistances, so S G S is assembled exactly however steeply the
    conductances decay, where a grounded linear solve loses the graded
    entries to its condition number.
    """
    arc_idx = order[run]
    log_mass = log_sum_exp(chain.log_stationary[arc_idx])
    lp_a = chain.log_stationary[arc_idx] - log_mass
    lrho = log_mass - m_edge[run[:-1]]  # conditioned edge resistances along the arc
    m = len(arc_idx)
    if candidates is None:
        anchors = range(m)
    else:
        cand = set(chain.state_indices(candidates))
        anchors = [k for k in range(m) if arc_idx[k] in cand]
    beta = 0.0
    for a in anchors:
        blocks = []
        if a > 0:
            r = np.logaddexp.accumulate(lrho[:a][::-1])[::-1]  # r[i] = R(i..a)
            near = np.maximum(np.arange(a)[:, None], np.arange(a)[None, :])
            blocks.append(0.5 * (lp_a[:a][:, None] + lp_a[:a][None, :]) + r[near])
        if a < m - 1:
            r = np.logaddexp.accumulate(lrho[a:])  # r[t] = R(a..a+t+1)
            k = m - 1 - a
            near = np.minimum(np.arange(k)[:, None], np.arange(k)[None, :])
            blocks.append(0.5 * (lp_a[a + 1:][:, None] + lp_a[a + 1:][None, :]) + r[near])
        mat = np.full((m - 1, m - 1), -np.inf)
        at = 0
        for b in blocks:
            mat[at:at + len(b), at:at + len(b)] = b
            at += len(b)
        top = float(np.linalg.eigvalsh(np.exp(mat))[-1])
        beta = max(beta, top)
    return beta


def exact_h5_constant(chain: FiniteChain, subset, candidates=None) -> float:
    """Smallest beta with  max_x sum_y pi_A(y) (h(y) - h(x))^2 <= beta * D(A, h).

    For each anchor x the supremum over h is the top eigenvalue of
    S G_x S, where S = diag(sqrt(pi_A)) and G_x is the inverse Dirichlet
    matrix grounded at x; the grounding fixes the common translation gauge.
    `candidates` restricts the anchors (e.g. to the inner boundary of A);
    by default all of A is scanned.  On arcs of cycle chains G_x is written
    down exactly in log space; elsewhere a dense grounded solve is used,
    which is only trustworthy while the subset's internal conductance
    spread stays well inside float range.  Capped at 2000 states.
    """
    idx = chain.state_indices(subset)
    if idx.size == 0:
        raise EmptySubsetError("exact_h5_constant needs a nonempty subset")
    if idx.size == 1:
        return 0.0
    if idx.size > EXACT_H5_CAP:
        raise TooLargeError(f"exact_h5_constant is dense; subset has {idx.size} > {EXACT_H5_CAP} states")
    rows, cols, vals = _induced_edges(chain, idx)
    if len(rows) == 0 or not _subset_connected(idx, rows, cols):
        raise DisconnectedSubsetError("subset does not induce a connected subgraph")

    ring = chain.ring_edge_log_conductance()
    if ring is not None and idx.size < chain.n_states:
        run = _ring_arc_positions(ring[0], idx)
        if run is not None:
            return _arc_h5_constant(chain, ring[0], ring[1], run, candidates)

    pos = {g: k for k, g in enumerate(idx)}
    m = len(idx)
    pi_a = np.exp(_subset_conditioned_log_pi(chain, idx))
    c = np.zeros((m, m))
    for r, csite, v in zip(rows, cols, vals):
        c[pos[r], pos[csite]] += pi_a[pos[r]] * v
    c = 0.5 * (c + c.T)  # reversible symmetrization; exact under detailed balance
    lap = np.diag(c.sum(axis=1)) - c

    if candidates is None:
        anchor_rows = range(m)
    else:
        anchor_idx = chain.state_indices(candidates)
        anchor_rows = [pos[g] for g in anchor_idx]

    beta = 0.0
    sq = np.sqrt(pi_a)
    keep_template = np.arange(m)
    for x in anchor_rows:
        keep = keep_template[keep_template != x]
        lap_red = lap[np.ix_(keep, keep)]
        try:
            half = np.linalg.solve(lap_red, np.diag(sq[keep]))
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(f"grounded Dirichlet solve failed: {exc}") from exc
        mat = sq[keep, None] * half
        top = float(np.linalg.eigvalsh(0.5 * (mat + mat.T))[-1])
        beta = max(beta, top)
    return beta


# ---------------------------------------------------------------------------
# tilting


def tilt_generator(chain: FiniteChain, u) -> FiniteChain:
    """Doob tilt R'(x,y) = R(x,y) u(y) / u(x) for strictly positive u.

    Preserves support and irreducibility; when the input is reversible the
    tilted chain is reversible with stationary weights proportional to
    u^2 pi (assembled exactly in log space).
    """
    u_arr = _function_on(chain, u)
    if np.any(u_arr <= 0.0):
        raise NonPositiveTestFunctionError("tilt function must be strictly positive")
    coo = chain.rates.tocoo()
    data = coo.data * u_arr[coo.col] / u_arr[coo.row]
    tilted = sp.coo_matrix((data, (coo.row, coo.col)), shape=chain.rates.shape).tocsr()
    if chain.reversible:
        log_pi = chain.log_stationary + 2.0 * np.log(u_arr)
        log_pi -= log_sum_exp(log_pi)
        return FiniteChain(chain.states, tilted, log_pi, True, chain.site_coordinates)
    log_pi, reversible = _stationary_log_weights(tilted, BALANCE_TOL)
    return FiniteChain(chain.states, tilted, log_pi, reversible, chain.site_coordinates)


# ---------------------------------------------------------------------------
# simulation


@dataclass
class TrajectorySample:
    """A Gillespie path: states[k] is occupied on [times[k], times[k+1])."""

    states: list
    times: list
    horizon: float
    seed: int


def simulate_trajectory(chain: FiniteChain, start, horizon: float, seed: int) -> TrajectorySample:
    """Exact jump-chain simulation up to the time horizon (deterministic in seed)."""
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    rng = np.random.default_rng(seed)
    probs = chain.jump_probabilities
    current = chain.index[start]
    t = 0.0
    visited = [chain.states[current]]
    times = [0.0]
    while True:
        t += rng.exponential(1.0 / chain.holding[current])
        if t >= horizon:
            break
        row = probs.getrow(current)
        current = int(rng.choice(row.indices, p=row.data / row.data.sum()))
        visited.append(chain.states[current])
        times.append(t)
    return TrajectorySample(states=visited, times=times, horizon=float(horizon), seed=int(seed))


def empirical_measure(chain: FiniteChain, sample: TrajectorySample) -> ProbabilityMeasure:
    """Occupation fractions of the sampled path over [0, horizon]."""
    weights = np.zeros(chain.n_states)
    endpoints = sample.times[1:] + [sample.horizon]
    for state, t0, t1 in zip(sample.states, sample.times, endpoints):
        weights[chain.index[state]] += t1 - t0
    return ProbabilityMeasure(chain.states, weights / sample.horizon)
