"""Exact discrete optimal transport with an asymmetric marginal relaxation.

Contents: weighted point-set measures, a successive-shortest-path
min-cost-flow solver used as the exact backend, the p-Wasserstein
distance, the closed-form 1-D 2-Wasserstein distance between feature
dimensions, the accompanying vector-as-distribution conversion, the
nested distance over sample batches, and the relaxed primal problem
whose value vanishes whenever the target measure is contained in the
source measure scaled by 1/(1-beta).

All solvers are deterministic: adjacency lists are built in index
order and shortest-path ties resolve by lowest node index, so returned
plans are reproducible bit for bit.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, InfeasibleError, ParseError

_MASS_TOL = 1e-12
_MARGINAL_TOL = 1e-9


@dataclass
class DiscreteMeasure:
    """Weighted point set: ``atoms`` (n,) scalars or (n, d) vectors, ``weights`` (n,)."""

    atoms: np.ndarray
    weights: np.ndarray
    total_mass: float = None

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.atoms.shape[0] != self.weights.shape[0]:
            raise ContractError("atom count differs from weight count")
        if self.weights.size == 0:
            raise ContractError("empty measure")
        if np.any(self.weights < 0):
            raise ContractError("negative weight")
        s = float(self.weights.sum())
        if self.total_mass is None:
            self.total_mass = s
        elif abs(s - self.total_mass) > _MASS_TOL * max(1.0, abs(self.total_mass)):
            raise ContractError(
                f"weights sum to {s}, declared total mass {self.total_mass}"
            )

    def __len__(self):
        return self.weights.shape[0]


@dataclass
class TransportPlan:
    """Nonnegative coupling matrix with its two marginals."""

    matrix: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.row_marginal = np.asarray(self.row_marginal, dtype=np.float64)
        self.col_marginal = np.asarray(self.col_marginal, dtype=np.float64)
        if np.any(self.matrix < -1e-12):
            raise ContractError("negative coupling entry")
        self.matrix = np.maximum(self.matrix, 0.0)
        if not np.allclose(self.matrix.sum(axis=1), self.row_marginal, atol=_MARGINAL_TOL):
            raise ContractError("row sums do not match row marginal")
        if not np.allclose(self.matrix.sum(axis=0), self.col_marginal, atol=_MARGINAL_TOL):
            raise ContractError("column sums do not match column marginal")


@dataclass
class CostMatrix:
    """Ground distances between source and target atoms, with exponent p."""

    values: np.ndarray
    p: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError("cost matrix must be 2-D")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ContractError("cost entries must be finite and nonnegative")
        if self.p <= 0:
            raise ContractError("exponent p must be positive")


# ---------------------------------------------------------------------
# min-cost flow (successive shortest paths with potentials)
# ---------------------------------------------------------------------

@dataclass
class FlowResult:
    cost: float
    flows: np.ndarray
    row_potentials: np.ndarray = field(repr=False, default=None)
    col_potentials: np.ndarray = field(repr=False, default=None)


class _Graph:
    def __init__(self, n):
        self.adj = [[] for _ in range(n)]

    def add_edge(self, u, v, cap, cost):
        # forward edge and residual reverse edge
        self.adj[u].append([v, cap, cost, 0.0, len(self.adj[v])])
        self.adj[v].append([u, 0.0, -cost, 0.0, len(self.adj[u]) - 1])


def _ssp(graph, s, t, want, n):
    """Deliver ``want`` units s -> t at min cost. Returns total cost.

    Successive shortest paths with Johnson potentials; unit costs must
    be nonnegative so plain Dijkstra applies from the first iteration.
    """
    pot = [0.0] * n
    delivered, total = 0.0, 0.0
    eps = 1e-13
    while want - delivered > 1e-12:
        dist = [np.inf] * n
        prev = [None] * n  # (node, edge index)
        dist[s] = 0.0
        heap = [(0.0, s)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist[u] + eps:
                continue
            for ei, e in enumerate(graph.adj[u]):
                v, cap, cost, flow, _ = e
                residual = cap - flow
                if residual <= eps:
                    continue
                nd = d + cost + pot[u] - pot[v]
                if nd < dist[v] - eps:
                    dist[v] = nd
                    prev[v] = (u, ei)
                    heapq.heappush(heap, (nd, v))
        if not np.isfinite(dist[t]):
            reachable = [i for i in range(n) if np.isfinite(dist[i])]
            raise InfeasibleError(
                f"cannot route remaining {want - delivered:.6g} mass; "
                f"saturated cut around nodes {reachable}"
            )
        for i in range(n):
            if np.isfinite(dist[i]):
                pot[i] += dist[i]
        # bottleneck along the path
        push = want - delivered
        v = t
        while v != s:
            u, ei = prev[v]
            e = graph.adj[u][ei]
            push = min(push, e[1] - e[3])
            v = u
        v = t
        while v != s:
            u, ei = prev[v]
            e = graph.adj[u][ei]
            e[3] += push
            graph.adj[v][e[4]][3] -= push
            total += push * e[2]
            v = u
        delivered += push
    return total, pot


def min_cost_flow(supplies, demands, capacities, unit_costs):
    """Transportation-shaped min-cost flow.

    Row i may emit at most ``supplies[i]``; column j must receive exactly
    ``demands[j]``; edge (i, j) carries at most ``capacities[i, j]``
    (None for uncapacitated) at unit cost ``unit_costs[i, j]`` >= 0.
    Returns a FlowResult whose potentials certify optimality through
    complementary slackness.
    """
    supplies = np.asarray(supplies, dtype=np.float64)
    demands = np.asarray(demands, dtype=np.float64)
    unit_costs = np.asarray(unit_costs, dtype=np.float64)
    n, m = unit_costs.shape
    if supplies.shape != (n,) or demands.shape != (m,):
        raise DimensionError("supply/demand shapes do not match the cost matrix")
    if np.any(supplies < 0) or np.any(demands < 0):
        raise ContractError("negative supply or demand")
    if np.any(unit_costs < 0):
        raise ContractError("unit costs must be nonnegative")
    if capacities is not None:
        capacities = np.asarray(capacities, dtype=np.float64)
        if capacities.shape != (n, m):
            raise DimensionError("capacity shape mismatch")
        if np.any(capacities < 0):
            raise ContractError("negative capacity")
    total_demand = float(demands.sum())
    if supplies.sum() < total_demand - 1e-9:
        raise InfeasibleError(
            f"violated cut: all supply rows saturate at {supplies.sum():.6g}, "
            f"below total demand {total_demand:.6g}"
        )

    s, t = n + m, n + m + 1
    g = _Graph(n + m + 2)
    for i in range(n):
        g.add_edge(s, i, float(supplies[i]), 0.0)
    for i in range(n):
        for j in range(m):
            cap = np.inf if capacities is None else float(capacities[i, j])
            if cap > 0:
                g.add_edge(i, n + j, cap, float(unit_costs[i, j]))
    for j in range(m):
        g.add_edge(n + j, t, float(demands[j]), 0.0)

    cost, pot = _ssp(g, s, t, total_demand, n + m + 2)

    flows = np.zeros((n, m))
    for i in range(n):
        for e in g.adj[i]:
            v, cap, c, flow, _ = e
            if n <= v < n + m and flow > 0:
                flows[i, v - n] += flow
    return FlowResult(
        cost=cost,
        flows=flows,
        row_potentials=np.array(pot[:n]),
        col_potentials=np.array(pot[n:n + m]),
    )


# ---------------------------------------------------------------------
# Wasserstein distances
# ---------------------------------------------------------------------

def wasserstein_exact(mu, nu, cost, p=None):
    """p-Wasserstein distance between two equal-mass discrete measures.

    ``cost`` holds ground distances; the solver raises them to the
    power p internally and takes the 1/p root of the optimum.
    """
    if p is None:
        p = cost.p
    if p <= 0:
        raise ContractError("p must be positive")
    if len(mu) == 0 or len(nu) == 0:
        raise ContractError("empty measure")
    if abs(mu.total_mass - nu.total_mass) > 1e-9:
        raise InfeasibleError(
            f"mass mismatch: {mu.total_mass} vs {nu.total_mass}"
        )
    if cost.values.shape != (len(mu), len(nu)):
        raise DimensionError("cost matrix shape does not match the measures")
    res = min_cost_flow(mu.weights, nu.weights, None, cost.values ** p)
    plan = TransportPlan(res.flows, mu.weights, nu.weights)
    return res.cost ** (1.0 / p), plan


def feature_to_measure(z, mode="softplus"):
    """View a feature vector as a measure on positions {1/M, ..., 1}.

    The weight of atom j is a nonnegative transform of z[j], normalized
    to total mass 1. Modes: "softplus-normalize" (default),
    "relu-normalize", "softmax"; the short aliases "softplus" and
    "relu" are accepted.
    """
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    M = z.size
    if M < 1:
        raise ContractError("empty feature vector")
    if mode in ("softplus", "softplus-normalize"):
        w = np.logaddexp(0.0, z)
    elif mode in ("relu", "relu-normalize"):
        w = np.maximum(z, 0.0)
    elif mode == "softmax":
        e = np.exp(z - z.max())
        w = e / e.sum()
    else:
        raise ContractError(f"unknown mode {mode!r}")
    s = w.sum()
    if s <= 0:
        raise ContractError("degenerate measure: all weights vanish after transform")
    positions = np.arange(1, M + 1, dtype=np.float64) / M
    return DiscreteMeasure(positions, w / s)


def w2_dimension(zA, zB):
    """Exact 1-D 2-Wasserstein distance by inverse-CDF matching."""
    if zA.atoms.ndim != 1 or zB.atoms.ndim != 1:
        raise DimensionError("w2_dimension expects 1-D measures")
    if abs(zA.total_mass - zB.total_mass) > 1e-9:
        raise InfeasibleError("mass mismatch between dimension measures")
    mass = zA.total_mass
    oa = np.argsort(zA.atoms, kind="stable")
    ob = np.argsort(zB.atoms, kind="stable")
    pa, wa = zA.atoms[oa], zA.weights[oa]
    pb, wb = zB.atoms[ob], zB.weights[ob]
    ia = ib = 0
    remaining_a, remaining_b = wa[0], wb[0]
    done = 0.0
    total = 0.0
    while done < mass - 1e-15:
        while remaining_a <= 1e-15 and ia + 1 < len(wa):
            ia += 1
            remaining_a = wa[ia]
        while remaining_b <= 1e-15 and ib + 1 < len(wb):
            ib += 1
            remaining_b = wb[ib]
        step = min(remaining_a, remaining_b, mass - done)
        if step <= 1e-15:
            break
        total += step * (pa[ia] - pb[ib]) ** 2
        remaining_a -= step
        remaining_b -= step
        done += step
    return float(np.sqrt(total))


def _batch_features(batch):
    f = getattr(batch, "features", batch)
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2:
        raise DimensionError("feature batch must be 2-D")
    return f


def nested_cost(batchA, batchB, mode="softplus"):
    """Pairwise ground-cost matrix of per-sample dimension measures."""
    A = _batch_features(batchA)
    B = _batch_features(batchB)
    measuresA = [feature_to_measure(row, mode) for row in A]
    measuresB = [feature_to_measure(row, mode) for row in B]
    G = np.zeros((len(measuresA), len(measuresB)))
    for i, ma in enumerate(measuresA):
        for j, mb in enumerate(measuresB):
            G[i, j] = w2_dimension(ma, mb)
    return CostMatrix(G, p=1.0)


def wwd(batchA, batchB, mode="softplus", weightsA=None, weightsB=None):
    """Nested distance: outer 1-Wasserstein over samples, inner 1-D
    2-Wasserstein between feature vectors viewed as dimension measures."""
    A = _batch_features(batchA)
    B = _batch_features(batchB)
    if weightsA is None:
        weightsA = np.full(A.shape[0], 1.0 / A.shape[0])
    if weightsB is None:
        weightsB = np.full(B.shape[0], 1.0 / B.shape[0])
    mu = DiscreteMeasure(np.arange(A.shape[0], dtype=np.float64), weightsA)
    nu = DiscreteMeasure(np.arange(B.shape[0], dtype=np.float64), weightsB)
    return wasserstein_exact(mu, nu, nested_cost(A, B, mode), p=1.0)


def ar_wwd_primal(source, target, cost, beta):
    """Relaxed primal transport: source atom i may emit up to
    P_s(i)/(1-beta), target atom j receives exactly P_t(j).

    The optimum is zero exactly when the target is contained in the
    scaled source (every P_t(j) <= P_s(j)/(1-beta) with zero self-cost).
    Monotone nonincreasing in beta; reduces to the balanced problem as
    beta -> 0.
    """
    if not (0 < beta < 1):
        raise ContractError("beta must lie strictly between 0 and 1")
    if abs(source.total_mass - 1.0) > 1e-9 or abs(target.total_mass - 1.0) > 1e-9:
        raise ContractError("both measures must have total mass 1")
    if cost.values.shape != (len(source), len(target)):
        raise DimensionError("cost matrix shape does not match the measures")
    caps = source.weights / (1.0 - beta)
    res = min_cost_flow(caps, target.weights, None, cost.values ** cost.p)
    plan = TransportPlan(res.flows, res.flows.sum(axis=1), target.weights)
    return res.cost ** (1.0 / cost.p), plan


def containment_check(source, target, beta):
    """True iff target weight <= source weight/(1-beta) at every atom."""
    if not (0 < beta < 1):
        raise ContractError("beta must lie strictly between 0 and 1")
    if len(source) != len(target):
        raise ContractError("containment_check needs shared atom indexing")
    return bool(np.all(target.weights <= source.weights / (1.0 - beta) + 1e-12))


# ---------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------

def load_measure(path):
    """Read a measure from delimited text: one atom per line,
    ``weight,coord1[,coord2,...]``. Blank lines and # comments skipped."""
    rows = []
    width = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) < 2:
                raise ParseError("expected weight,coord1[,coord2,...]", line=lineno)
            try:
                values = [float(p) for p in parts]
            except ValueError:
                raise ParseError(f"non-numeric field in {line!r}", line=lineno)
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise ParseError(
                    f"expected {width} fields, got {len(values)}", line=lineno
                )
            rows.append(values)
    if not rows:
        raise ContractError(f"no atoms in measure file {path}")
    arr = np.array(rows)
    weights = arr[:, 0]
    atoms = arr[:, 1] if arr.shape[1] == 2 else arr[:, 1:]
    return DiscreteMeasure(atoms, weights)


def save_measure(measure, path):
    atoms = measure.atoms if measure.atoms.ndim == 2 else measure.atoms[:, None]
    with open(path, "w", encoding="ascii") as fh:
        for w, coords in zip(measure.weights, atoms):
            fields = [repr(float(w))] + [repr(float(c)) for c in coords]
            fh.write(",".join(fields) + "\n")
