"""Metastable ladders: reduced chains, closed classes, and limit measures.

A ladder stacks finitely many reduced chains, one per time scale.  Level p
describes the slow motion among the valleys that survive at that scale;
its closed irreducible classes become the valleys of level p+1, transient
valleys are absorbed into the remainder set, and the stationary measures
of the closed classes propagate point masses upward:

    pi^{(p+1)}_m = sum_{j in class m} M^{(p)}_m(j) * pi^{(p)}_j.       (recursion)

The same weights admit a product form (one stationary factor per level
along the membership path of each base point); both are computed by
independent code paths and their agreement to 1e-12 is asserted on every
ladder built.

The finite-chain rate functional of a reduced chain is evaluated two ways
as well: a class decomposition (reversible edge forms inside communication
classes plus linear cross-class terms), and a direct concave maximization
over log test functions.  The decomposition is the primary route whenever
each class is reversible; the numerical route cross-checks it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .chains import ProbabilityMeasure
from .errors import (
    H2ViolationError,
    H3ViolationError,
    NegativeRateError,
    NotClosedClassError,
    OptimizerNotConvergedError,
)
from .numerics import stable_sum

logger = logging.getLogger(__name__)

MEASURE_IDENTITY_TOL = 1e-12
LIFT_RESIDUAL_TOL = 1e-9
DV_CROSS_CHECK_TOL = 1e-6
LOG_H_BOUND = 40.0


# ---------------------------------------------------------------------------
# reduced chains


class ReducedChain:
    """Finite-rate chain on valley labels; zero rows mark absorbing valleys."""

    def __init__(self, states, rates, gamma_weights=None):
        self.states = tuple(states)
        k = len(self.states)
        r = np.asarray(rates, dtype=float)
        if r.shape != (k, k):
            raise ValueError(f"rate matrix must be {k}x{k}")
        if np.any(r < 0.0):
            raise NegativeRateError("reduced rates must be nonnegative")
        if np.any(np.diag(r) != 0.0):
            raise ValueError("reduced rates must have zero diagonal")
        if k >= 2 and not np.any(r > 0.0):
            raise ValueError("a multi-state reduced chain needs a positive rate")
        self.rates = r
        self.index = {s: i for i, s in enumerate(self.states)}
        # optional reversibility data: weights g with g_i r(i,j) = g_j r(j,i)
        self.gamma_weights = None if gamma_weights is None else np.asarray(gamma_weights, dtype=float)

    @property
    def n_states(self) -> int:
        return len(self.states)

    def measure(self, weights) -> ProbabilityMeasure:
        if isinstance(weights, ProbabilityMeasure):
            if weights.states == self.states:
                return weights
            return ProbabilityMeasure(self.states, weights.align(self.states))
        if isinstance(weights, dict):
            return ProbabilityMeasure.from_dict(weights, states=self.states)
        return ProbabilityMeasure(self.states, np.asarray(weights, dtype=float))

    def to_json_dict(self) -> dict:
        out = {
            "states": [_label(s) for s in self.states],
            "rates": [[float(v) for v in row] for row in self.rates],
        }
        if self.gamma_weights is not None:
            out["gamma_weights"] = [float(v) for v in self.gamma_weights]
        return out


def _label(s):
    return s if isinstance(s, (str, int, float)) else repr(s)


# ---------------------------------------------------------------------------
# class decomposition


@dataclass
class ClassDecomposition:
    """Communication classes of the positive-rate digraph, split by closure."""

    classes: list  # all communication classes, each a tuple of states
    closed: list  # classes with no outgoing rate
    transient: tuple  # states outside every closed class
    nontrivial: list  # classes with >= 2 states
    singletons: tuple  # states whose class is a singleton

    def class_of(self, state) -> int:
        for a, cls in enumerate(self.classes):
            if state in cls:
                return a
        raise KeyError(state)


def decompose_classes(reduced: ReducedChain) -> ClassDecomposition:
    """Strongly-connected-component decomposition of the positive-rate digraph.

    Closed classes are components with no rate leaving them; the transient
    set is everything else.  The partition identities (every state in
    exactly one class; closed classes disjoint from the transient set) hold
    by construction.
    """
    k = reduced.n_states
    graph = sp.csr_matrix((reduced.rates > 0.0).astype(float))
    n_comp, labels = connected_components(graph, directed=True, connection="strong")
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    # deterministic order: by smallest member position
    ordered = sorted(groups.values(), key=lambda g: g[0])
    classes = [tuple(reduced.states[i] for i in g) for g in ordered]
    closed = []
    for g, cls in zip(ordered, classes):
        inside = np.zeros(k, dtype=bool)
        inside[g] = True
        if not np.any(reduced.rates[np.ix_(g, np.flatnonzero(~inside))] > 0.0):
            closed.append(cls)
    in_closed = {s for cls in closed for s in cls}
    transient = tuple(s for s in reduced.states if s not in in_closed)
    nontrivial = [cls for cls in classes if len(cls) >= 2]
    singletons = tuple(s for cls in classes if len(cls) == 1 for s in cls)
    return ClassDecomposition(classes, closed, transient, nontrivial, singletons)


def restricted_stationary(reduced: ReducedChain, closed_class) -> ProbabilityMeasure:
    """Stationary measure of the chain restricted to a closed irreducible class."""
    cls = tuple(closed_class)
    decomp = decompose_classes(reduced)
    if cls not in [tuple(c) for c in decomp.closed]:
        raise NotClosedClassError(f"{cls!r} is not a closed irreducible class")
    if len(cls) == 1:
        return ProbabilityMeasure(cls, np.array([1.0]))
    idx = [reduced.index[s] for s in cls]
    r = reduced.rates[np.ix_(idx, idx)]
    gen = r - np.diag(r.sum(axis=1))
    a = np.vstack([gen.T[:-1], np.ones(len(cls))])
    b = np.zeros(len(cls))
    b[-1] = 1.0
    weights = np.linalg.solve(a, b)
    weights = np.clip(weights, 0.0, None)
    return ProbabilityMeasure(cls, weights, normalize=True)


# ---------------------------------------------------------------------------
# ladder


@dataclass
class LadderLevel:
    level: int  # 1-based
    reduced: ReducedChain
    depth: float | None
    valley_members: dict  # valley label -> tuple of base labels (subset of S1)
    decomposition: ClassDecomposition
    class_stationary: list  # ProbabilityMeasure per closed class, same order
    limit_measures: dict = field(default_factory=dict)  # label -> {base: weight}, recursion route
    product_measures: dict = field(default_factory=dict)  # label -> {base: weight}, product route


@dataclass
class Ladder:
    base_states: tuple  # S1 labels
    levels: list
    terminal_measure: dict  # {base label: weight} for the unique top class

    @property
    def depth_count(self) -> int:
        return len(self.levels)

    def to_json_dict(self) -> dict:
        return {
            "base_states": [_label(s) for s in self.base_states],
            "levels": [
                {
                    "level": lv.level,
                    "depth": lv.depth,
                    "reduced_chain": lv.reduced.to_json_dict(),
                    "valley_members": {_label(j): [_label(i) for i in members]
                                       for j, members in lv.valley_members.items()},
                    "closed_classes": [[_label(s) for s in cls] for cls in lv.decomposition.closed],
                    "transient": [_label(s) for s in lv.decomposition.transient],
                    "class_stationary": [
                        {_label(s): float(m[s]) for s in m.states} for m in lv.class_stationary
                    ],
                    "limit_measures": {
                        _label(j): {_label(i): float(w) for i, w in meas.items()}
                        for j, meas in lv.limit_measures.items()
                    },
                }
                for lv in self.levels
            ],
            "terminal_measure": {_label(i): float(w) for i, w in self.terminal_measure.items()},
        }


def build_ladder(base_states, reduced_chains, depths=None) -> Ladder:
    """Assemble a ladder from per-level reduced chains.

    Level-(p+1) valleys are unions of level-p valleys over the closed
    classes of the level-p chain; the class count must match the next
    chain's state count (closed classes and next-level states are paired in
    sorted order), valley counts must strictly decrease, and the final
    chain must have exactly one closed irreducible class.
    """
    base_states = tuple(base_states)
    chains = list(reduced_chains)
    if not chains:
        raise ValueError("need at least one reduced chain")
    if tuple(chains[0].states) != base_states:
        raise H2ViolationError("level-1 chain states must equal the base valley labels")
    if depths is not None:
        depths = [float(d) for d in depths]
        if len(depths) != len(chains):
            raise ValueError("one depth per level required")
        if any(b <= a for a, b in zip(depths, depths[1:])):
            raise ValueError("depths must be strictly increasing")

    levels: list[LadderLevel] = []
    members = {s: (s,) for s in base_states}
    for p, chain in enumerate(chains, start=1):
        decomp = decompose_classes(chain)
        stationary = [restricted_stationary(chain, cls) for cls in decomp.closed]
        levels.append(
            LadderLevel(
                level=p,
                reduced=chain,
                depth=None if depths is None else depths[p - 1],
                valley_members=dict(members),
                decomposition=decomp,
                class_stationary=stationary,
            )
        )
        is_last = p == len(chains)
        if is_last:
            if len(decomp.closed) != 1:
                raise H3ViolationError(
                    f"final level has {len(decomp.closed)} closed classes, need exactly 1"
                )
            break
        nxt = chains[p]
        if len(decomp.closed) != nxt.n_states:
            raise H2ViolationError(
                f"level {p} has {len(decomp.closed)} closed classes but level {p + 1} "
                f"has {nxt.n_states} states"
            )
        if nxt.n_states >= chain.n_states:
            raise H2ViolationError(
                f"valley count must strictly decrease: level {p} has {chain.n_states}, "
                f"level {p + 1} has {nxt.n_states}"
            )
        members = {
            nxt.states[m]: tuple(i for j in cls for i in members[j])
            for m, cls in enumerate(decomp.closed)
        }

    ladder = Ladder(base_states, levels, terminal_measure={})
    hierarchical_measures(ladder)
    return ladder


def hierarchical_measures(ladder: Ladder) -> Ladder:
    """Populate the limit measures pi^{(p)}_j by recursion and by product.

    Both routes are stored on each level and their agreement to 1e-12 per
    weight is asserted; the terminal mixture over the unique top class is
    stored on the ladder.
    """
    first = ladder.levels[0]
    first.limit_measures = {j: {j: 1.0} for j in first.reduced.states}
    for prev, cur in zip(ladder.levels, ladder.levels[1:]):
        cur.limit_measures = {}
        for m, cls in enumerate(prev.decomposition.closed):
            weights = prev.class_stationary[m]
            label = cur.reduced.states[m]
            merged: dict = {}
            for j in cls:
                for i, w in prev.limit_measures[j].items():
                    merged[i] = merged.get(i, 0.0) + weights[j] * w
            cur.limit_measures[label] = merged

    for level in ladder.levels:
        level.product_measures = {
            j: _product_measure(ladder, level.level, j) for j in level.reduced.states
        }
        for j in level.reduced.states:
            rec = level.limit_measures[j]
            prod = level.product_measures[j]
            keys = set(rec) | set(prod)
            dev = max(abs(rec.get(i, 0.0) - prod.get(i, 0.0)) for i in keys)
            if dev > MEASURE_IDENTITY_TOL:
                raise AssertionError(
                    f"measure recursion and product disagree at level {level.level}, "
                    f"valley {j!r}: max deviation {dev:.3e}"
                )

    top = ladder.levels[-1]
    weights = top.class_stationary[0]
    terminal: dict = {}
    for j in top.decomposition.closed[0]:
        for i, w in top.limit_measures[j].items():
            terminal[i] = terminal.get(i, 0.0) + weights[j] * w
    ladder.terminal_measure = terminal
    return ladder


def _product_measure(ladder: Ladder, p: int, valley) -> dict:
    """Weights of pi^{(p)}_valley as a product of one stationary factor per level."""
    level = ladder.levels[p - 1]
    out: dict = {}
    for i in level.valley_members[valley]:
        factor = 1.0
        for q in range(p - 1):
            lq = ladder.levels[q]
            holder = next(j for j, mem in lq.valley_members.items() if i in mem)
            m = next(
                k for k, cls in enumerate(lq.decomposition.closed) if holder in cls
            )
            factor *= lq.class_stationary[m][holder]
        out[i] = factor
    return out


# ---------------------------------------------------------------------------
# finite-chain rate functionals


def _class_decomposition_value(reduced: ReducedChain, omega: np.ndarray, decomp: ClassDecomposition):
    """Rate functional via per-class edge forms plus cross-class linear terms.

    Returns None when some multi-state class is not reversible (the caller
    then falls back to the numerical supremum).
    """
    r = reduced.rates
    total = 0.0
    for cls in decomp.classes:
        idx = [reduced.index[s] for s in cls]
        if len(idx) >= 2:
            sub = r[np.ix_(idx, idx)]
            if not _restricted_reversible(sub):
                return None
            terms = []
            for a in range(len(idx)):
                for b in range(a + 1, len(idx)):
                    terms.append(
                        (math.sqrt(omega[idx[a]] * sub[a, b]) - math.sqrt(omega[idx[b]] * sub[b, a])) ** 2
                    )
            total += stable_sum(terms)
    # cross-class rates enter linearly in the emitting mass
    class_index = np.empty(reduced.n_states, dtype=int)
    for a, cls in enumerate(decomp.classes):
        for s in cls:
            class_index[reduced.index[s]] = a
    i_idx, j_idx = np.nonzero(r > 0.0)
    cross = class_index[i_idx] != class_index[j_idx]
    total += float(np.sum(omega[i_idx[cross]] * r[i_idx[cross], j_idx[cross]]))
    return total


def _restricted_reversible(sub: np.ndarray, tol: float = 1e-10) -> bool:
    k = sub.shape[0]
    gen = sub - np.diag(sub.sum(axis=1))
    a = np.vstack([gen.T[:-1], np.ones(k)])
    b = np.zeros(k)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        return False
    if np.any(pi <= 0.0):
        return False
    flow = pi[:, None] * sub
    dev = np.abs(flow - flow.T)
    scale = np.maximum(np.maximum(flow, flow.T), 1e-300)
    return bool(np.all(dev / scale <= tol) or np.all(dev <= tol * flow.max()))


def _dv_objective(reduced: ReducedChain, omega: np.ndarray):
    """phi(v) = sum_i omega_i sum_j r(i,j)(1 - exp(v_j - v_i)), concave in v."""
    r = reduced.rates
    i_idx, j_idx = np.nonzero(r > 0.0)
    w = omega[i_idx] * r[i_idx, j_idx]
    base = float(np.sum(w))

    def value_and_grad(v_free: np.ndarray):
        v = np.concatenate([[0.0], v_free])
        e = np.exp(v[j_idx] - v[i_idx])
        val = base - float(np.sum(w * e))
        grad = np.zeros(reduced.n_states)
        np.subtract.at(grad, j_idx, w * e)
        np.add.at(grad, i_idx, w * e)
        return -val, -grad[1:]

    return value_and_grad


def dv_numerical_sup(reduced: ReducedChain, omega: np.ndarray, starts: int = 8, seed: int = 703) -> float:
    """Direct concave maximization of the finite-chain variational formula.

    Parameterized by log test functions with the first coordinate pinned
    (the objective is scale invariant); multistart guards the absorbing
    case where the supremum is approached at the boundary.
    """
    k = reduced.n_states
    if k == 1 or not np.any(reduced.rates > 0.0):
        return 0.0
    fun = _dv_objective(reduced, omega)
    rng = np.random.default_rng(seed)
    inits = [np.zeros(k - 1)]
    inits += [rng.uniform(-3.0, 3.0, size=k - 1) for _ in range(starts)]
    best = -math.inf
    converged = False
    bounds = [(-LOG_H_BOUND, LOG_H_BOUND)] * (k - 1)
    for x0 in inits:
        res = scipy.optimize.minimize(
            fun, x0, jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": 500, "ftol": 1e-15, "gtol": 1e-12},
        )
        if res.success:
            converged = True
        best = max(best, -float(res.fun))
    if not converged:
        raise OptimizerNotConvergedError(
            f"no ascent start converged; best lower bound {best:.12g}", best_value=best
        )
    return best


def dv_finite(reduced: ReducedChain, omega, cross_check: bool = True) -> float:
    """Rate functional of a reduced chain at the measure omega.

    Uses the class decomposition (edge forms inside reversible communication
    classes, linear cross-class terms) when applicable, cross-checked
    against the numerical supremum; otherwise the numerical supremum alone.
    """
    measure = reduced.measure(omega)
    w = measure.values
    decomp = decompose_classes(reduced)
    decomposed = _class_decomposition_value(reduced, w, decomp)
    if decomposed is None:
        return dv_numerical_sup(reduced, w)
    if cross_check and reduced.n_states <= 8:
        numeric = dv_numerical_sup(reduced, w)
        if abs(numeric - decomposed) > DV_CROSS_CHECK_TOL * max(1.0, abs(decomposed)):
            logger.warning(
                "class-decomposition value %.12g and numerical supremum %.12g disagree",
                decomposed, numeric,
            )
    return decomposed


def lift_functional(ladder: Ladder, p: int, mu) -> float:
    """Value of the level-p functional at a Dirac mixture over base points.

    Solves mu = sum_j omega_j pi^{(p)}_j for omega (the supports are disjoint
    across valleys, so omega is determined by valley masses); returns +inf
    when the within-valley ratios do not match to 1e-9.
    """
    level = ladder.levels[p - 1]
    weights = {s: 0.0 for s in ladder.base_states}
    if isinstance(mu, ProbabilityMeasure):
        for s in mu.states:
            weights[s] = mu[s]
    else:
        for s, w in dict(mu).items():
            weights[s] = float(w)

    omega = np.zeros(level.reduced.n_states)
    covered = set()
    for j_pos, j in enumerate(level.reduced.states):
        meas = level.limit_measures[j]
        covered.update(meas)
        omega[j_pos] = stable_sum([weights[i] for i in meas])
    # mass outside every valley support is unrepresentable
    stray = stable_sum([w for s, w in weights.items() if s not in covered])
    if stray > LIFT_RESIDUAL_TOL:
        return math.inf
    for j_pos, j in enumerate(level.reduced.states):
        for i, m_w in level.limit_measures[j].items():
            if abs(weights[i] - omega[j_pos] * m_w) > LIFT_RESIDUAL_TOL:
                return math.inf
    return dv_finite(level.reduced, omega)


# ---------------------------------------------------------------------------
# zero-level-set structure


def zero_level_set_report(ladder: Ladder, samples: int = 12, seed: int = 2609) -> dict:
    """Numerical certificate for the nested zero-level-set structure.

    Checks, per level: stationary mixtures of closed classes have
    functional value 0 and perturbations have strictly positive value; the
    next level's functional is finite exactly on the zero set; the top
    level's zero set is the single terminal mixture; and the depth scales
    strictly increase when depths are attached.
    """
    rng = np.random.default_rng(seed)
    report: dict = {"levels": [], "all_pass": True}

    depths = [lv.depth for lv in ladder.levels]
    if any(d is None for d in depths):
        scale_ok = True
        scale_note = "no depth data attached; separation not applicable"
    else:
        scale_ok = all(b > a for a, b in zip(depths, depths[1:]))
        scale_note = f"depths {depths}"
    report["scale_separation"] = {"pass": scale_ok, "note": scale_note}

    for level in ladder.levels:
        entry = {"level": level.level}
        reduced = level.reduced
        k = reduced.n_states
        decomp = level.decomposition

        # stationary mixtures lie in the zero set
        zero_vals = []
        for _ in range(samples):
            alpha = rng.dirichlet(np.ones(len(decomp.closed)))
            omega = np.zeros(k)
            for a, cls in enumerate(decomp.closed):
                m = level.class_stationary[a]
                for s in cls:
                    omega[reduced.index[s]] += alpha[a] * m[s]
            zero_vals.append(dv_finite(reduced, omega))
        entry["max_on_zero_set"] = max(zero_vals)
        zero_ok = entry["max_on_zero_set"] <= 1e-10

        # perturbations leave it
        positive_ok = True
        if k >= 2 and (decomp.transient or len(decomp.closed) >= 1):
            for _ in range(samples):
                omega = rng.dirichlet(np.ones(k))
                val = dv_finite(reduced, omega)
                stationary = _is_stationary_mixture(level, omega)
                if stationary and val > 1e-10:
                    positive_ok = False
                if not stationary and val <= 1e-12:
                    positive_ok = False
        entry["strict_positivity"] = positive_ok
        entry["pass"] = zero_ok and positive_ok
        report["levels"].append(entry)

    # nesting: level p+1 finite exactly on the zero set of level p
    nesting = []
    for p in range(1, len(ladder.levels)):
        nxt = ladder.levels[p]
        ok = True
        for _ in range(samples):
            alpha = rng.dirichlet(np.ones(nxt.reduced.n_states))
            mu: dict = {}
            for a, j in enumerate(nxt.reduced.states):
                for i, w in nxt.limit_measures[j].items():
                    mu[i] = mu.get(i, 0.0) + alpha[a] * w
            if lift_functional(ladder, p, mu) > 1e-10:
                ok = False
            if not math.isfinite(lift_functional(ladder, p + 1, mu)):
                ok = False
        # a mixture with mass on a transient valley is outside the zero set
        prev = ladder.levels[p - 1]
        if prev.decomposition.transient:
            omega = np.full(prev.reduced.n_states, 1.0 / prev.reduced.n_states)
            mu = {}
            for j_pos, j in enumerate(prev.reduced.states):
                for i, w in prev.limit_measures[j].items():
                    mu[i] = mu.get(i, 0.0) + omega[j_pos] * w
            if lift_functional(ladder, p, mu) <= 1e-12:
                ok = False
            if math.isfinite(lift_functional(ladder, p + 1, mu)):
                ok = False
        nesting.append({"between": (p, p + 1), "pass": ok})
    report["nesting"] = nesting

    top = ladder.levels[-1]
    top_zero = dv_finite(top.reduced, _terminal_omega(ladder))
    singleton_ok = len(top.decomposition.closed) == 1 and top_zero <= 1e-10
    for _ in range(samples):
        omega = rng.dirichlet(np.ones(top.reduced.n_states))
        if np.max(np.abs(omega - _terminal_omega(ladder))) > 1e-9:
            if dv_finite(top.reduced, omega) <= 1e-12 and top.reduced.n_states > 1:
                singleton_ok = False
    report["top_singleton"] = {"pass": singleton_ok, "value_at_terminal": top_zero}

    report["all_pass"] = (
        report["scale_separation"]["pass"]
        and all(e["pass"] for e in report["levels"])
        and all(e["pass"] for e in nesting)
        and singleton_ok
    )
    return report


def _is_stationary_mixture(level: LadderLevel, omega: np.ndarray, tol: float = 1e-9) -> bool:
    reduced = level.reduced
    target = np.zeros(reduced.n_states)
    decomp = level.decomposition
    if decomp.transient:
        transient_idx = [reduced.index[s] for s in decomp.transient]
        if np.any(omega[transient_idx] > tol):
            return False
    for a, cls in enumerate(decomp.closed):
        idx = [reduced.index[s] for s in cls]
        mass = omega[idx].sum()
        m = level.class_stationary[a]
        for s in cls:
            target[reduced.index[s]] = mass * m[s]
    return bool(np.max(np.abs(omega - target)) <= tol)


def _terminal_omega(ladder: Ladder) -> np.ndarray:
    top = ladder.levels[-1]
    omega = np.zeros(top.reduced.n_states)
    m = top.class_stationary[0]
    for s in top.decomposition.closed[0]:
        omega[top.reduced.index[s]] = m[s]
    return omega
