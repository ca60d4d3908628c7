"""Conditional mutual information machinery.

Exact computation on small discrete joints (the test oracle), a
noise-contrastive lower-bound estimator with conditioned negatives, the
analytic log-density-ratio scorer that makes the bound tight, and the
positive/negative pairing rules used when the estimator runs on feature
batches instead of tabulated distributions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, ParseError
from .tensorcore import (
    MLP,
    SplitMix64,
    add,
    as_tensor,
    constant,
    logsumexp,
    matmul,
    mul,
    sub,
    tmean,
    transpose,
    tsum,
)

_SCORE_FLOOR = -30.0


@dataclass
class DiscreteJoint:
    """Probability table over three finite alphabets, shape (a, b, c)."""

    table: np.ndarray

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.ndim != 3:
            raise DimensionError("joint table must have three axes")
        if np.any(self.table < 0):
            raise ContractError("negative probability")
        if abs(self.table.sum() - 1.0) > 1e-12:
            raise ContractError(f"probabilities sum to {self.table.sum()}, not 1")

    @property
    def shape(self):
        return self.table.shape


@dataclass
class ContrastiveBatch:
    """One anchor per row with its conditioning input and K candidates.

    Candidate column 0 is always the positive. ``candidates`` holds
    values: an (N, K) integer array for tabulated alphabets or an
    (N, K, M) float array of feature rows. When the batch was built by
    the in-batch rule, ``candidate_indices`` records which anchors the
    candidates came from so the no-self-negative invariant can be
    checked (and K equals the batch size under that rule).
    """

    sources: np.ndarray
    anchors: np.ndarray
    candidates: np.ndarray
    z: np.ndarray = None
    candidate_indices: np.ndarray = None

    def __post_init__(self):
        n = self.anchors.shape[0]
        if self.sources.shape[0] != n or self.candidates.shape[0] != n:
            raise ContractError("batch fields disagree on row count")
        if self.candidates.shape[1] < 1:
            raise ContractError("need at least the positive candidate")
        if self.candidate_indices is not None:
            idx = np.asarray(self.candidate_indices)
            if not np.array_equal(idx[:, 0], np.arange(n)):
                raise ContractError("candidate column 0 must be the positive")
            rows = np.arange(n)[:, None]
            if np.any(idx[:, 1:] == rows):
                raise ContractError("positive index found among negatives")

    @property
    def k(self):
        return self.candidates.shape[1]


# ---------------------------------------------------------------------
# exact information quantities
# ---------------------------------------------------------------------

def _entropy(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def mutual_information(table2d):
    """I(A;B) in nats for a 2-D probability table, 0 log 0 = 0."""
    t = np.asarray(table2d, dtype=np.float64)
    pa = t.sum(axis=1)
    pb = t.sum(axis=0)
    mask = t > 0
    ratio = t[mask] / (pa[:, None] * pb[None, :])[mask]
    return float((t[mask] * np.log(ratio)).sum())


def exact_cmi(joint):
    """I(X_s; X_t | Z) in nats by direct summation over the table."""
    t = joint.table
    pz = t.sum(axis=(0, 1))
    total = 0.0
    for k in range(t.shape[2]):
        if pz[k] <= 0:
            continue
        total += pz[k] * mutual_information(t[:, :, k] / pz[k])
    return max(total, 0.0)


def interaction_information(joint):
    """I(X_s; X_t) - I(X_s; X_t | Z); negative values indicate synergy."""
    pair = joint.table.sum(axis=2)
    return mutual_information(pair) - exact_cmi(joint)


@dataclass
class Assumption1Report:
    i_source: float
    i_target: float
    entropy: float
    passed: bool


def verify_assumption1(joint, tol=1e-9):
    """Check that each of the first two axes determines the third.

    The joint is read as (X_s, X_t, Y); both I(X_s;Y) and I(X_t;Y) must
    equal H(Y) for the label to be fully recoverable from either side.
    """
    t = joint.table
    i_s = mutual_information(t.sum(axis=1))
    i_t = mutual_information(t.sum(axis=0))
    h = _entropy(t.sum(axis=(0, 1)))
    passed = abs(i_s - h) <= tol and abs(i_t - h) <= tol
    return Assumption1Report(i_s, i_t, h, passed)


# ---------------------------------------------------------------------
# scorers
# ---------------------------------------------------------------------

class TabularScorer:
    """Analytic scorer over discrete alphabets: a lookup table (a, b, c)."""

    def __init__(self, table):
        table = np.asarray(table, dtype=np.float64)
        if not np.all(np.isfinite(table)):
            raise ContractError("scorer table must be finite")
        self.table = table

    def score_matrix(self, batch):
        xs = np.asarray(batch.sources, dtype=np.int64)
        cand = np.asarray(batch.candidates, dtype=np.int64)
        z = np.asarray(batch.z, dtype=np.int64)
        return self.table[xs[:, None], cand, z[:, None]]


def optimal_scorer(joint):
    """Log density ratio log[P(x_t|x_s,z) / P(x_t|z)] as a table.

    Zero-probability ratios are floored at -30 so log-sums stay finite;
    cells whose conditioning event has probability zero are never
    sampled and score 0.
    """
    t = joint.table
    p_sz = t.sum(axis=1)            # (a, c)
    p_tz = t.sum(axis=0)            # (b, c)
    pz = t.sum(axis=(0, 1))         # (c,)
    a, b, c = t.shape
    table = np.zeros((a, b, c))
    for i in range(a):
        for k in range(c):
            if p_sz[i, k] <= 0 or pz[k] <= 0:
                continue
            for j in range(b):
                denom = p_tz[j, k] / pz[k]
                if denom <= 0:
                    continue
                num = t[i, j, k] / p_sz[i, k]
                if num <= 0:
                    table[i, j, k] = _SCORE_FLOOR
                else:
                    table[i, j, k] = max(np.log(num / denom), _SCORE_FLOOR)
    return TabularScorer(table)


class BilinearScorer:
    """Feature-space scorer: shared embedding g applied to both the
    paired source row and each candidate row, scored against the anchor.

    score(s, cand, anchor) = 0.5 (<g(s), anchor> + <g(cand), anchor>)
    """

    def __init__(self, dim, rng, hidden=(32, 32, 32), name="scorer"):
        self.net = MLP([dim, *hidden, dim], rng, head=None, name=name)

    def parameters(self):
        return self.net.parameters()

    def score_matrix(self, batch):
        anchors = np.asarray(batch.anchors, dtype=np.float64)
        sources = np.asarray(batch.sources, dtype=np.float64)
        cand = np.asarray(batch.candidates, dtype=np.float64)
        if cand.ndim != 3:
            raise DimensionError("feature candidates must be (N, K, M)")
        n, k, m = cand.shape
        gs = self.net.forward(as_tensor(sources)).value
        gc = self.net.forward(as_tensor(cand.reshape(n * k, m))).value
        gc = gc.reshape(n, k, -1)
        own = (gs * anchors).sum(axis=1)
        cross = (gc * anchors[:, None, :]).sum(axis=2)
        return 0.5 * (own[:, None] + cross)

    def objective_graph(self, paired_sources, anchors):
        """Differentiable in-batch estimate (K = N, positive = self).

        Both arguments are Tensors of shape (N, M); gradients flow into
        the scorer weights and into whatever produced the features.
        """
        n = anchors.shape[0]
        u = self.net.forward(paired_sources)
        g = self.net.forward(anchors)
        own = tsum(mul(u, anchors), axis=1, keepdims=True)       # (N,1)
        cross = matmul(anchors, transpose(g))                    # (N,N)
        scores = mul(add(own, cross), constant(0.5))
        eye = constant(np.eye(n))
        pos = tsum(mul(scores, eye), axis=1)                     # (N,)
        terms = add(sub(pos, logsumexp(scores, axis=1)), constant(np.log(n)))
        return tmean(terms)


# ---------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------

def cnce_terms(scorer, batch):
    """Per-sample contrastive terms, each exactly <= log K.

    The log-sum-exp shift uses the row maximum, which keeps the bound
    exact in floating point: the shifted sum is >= 1 whenever the
    positive attains the maximum, and >= exp(pos - max) otherwise.
    """
    s = np.asarray(scorer.score_matrix(batch), dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ContractError("scorer produced non-finite values")
    k = s.shape[1]
    if k == 1:
        return np.zeros(s.shape[0])
    m = s.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(s - m).sum(axis=1))
    return (s[:, 0] - lse) + np.log(k)


def cnce_estimate(scorer, batches):
    """Monte-Carlo contrastive lower-bound estimate, pooled over batches."""
    if not isinstance(batches, (list, tuple)):
        batches = [batches]
    if len(batches) == 0:
        raise ContractError("no batches given")
    pooled = np.concatenate([cnce_terms(scorer, b) for b in batches])
    return float(pooled.mean())


# ---------------------------------------------------------------------
# sampling rules
# ---------------------------------------------------------------------

def pair_positive(Zt, Zs):
    """Index of the nearest source row for every target row
    (squared Euclidean; ties go to the lowest index)."""
    Zt = np.asarray(getattr(Zt, "features", Zt), dtype=np.float64)
    Zs = np.asarray(getattr(Zs, "features", Zs), dtype=np.float64)
    if Zt.shape[0] == 0 or Zs.shape[0] == 0:
        raise ContractError("empty batch")
    d = ((Zt[:, None, :] - Zs[None, :, :]) ** 2).sum(axis=2)
    return d.argmin(axis=1)


def build_negatives(i, n):
    """The other n-1 batch indices; the in-batch rule sets K = n."""
    if n < 2:
        raise ContractError("batch of size 1 has no negatives")
    if not (0 <= i < n):
        raise ContractError(f"index {i} outside batch of size {n}")
    return np.concatenate([np.arange(0, i), np.arange(i + 1, n)])


def contrastive_from_features(Zs, Zt):
    """Build the in-batch contrastive structure from two feature batches."""
    Zs = np.asarray(getattr(Zs, "features", Zs), dtype=np.float64)
    Zt = np.asarray(getattr(Zt, "features", Zt), dtype=np.float64)
    n = Zt.shape[0]
    pairing = pair_positive(Zt, Zs)
    idx = np.stack([np.concatenate([[i], build_negatives(i, n)]) for i in range(n)])
    return ContrastiveBatch(
        sources=Zs[pairing],
        anchors=Zt,
        candidates=Zt[idx],
        candidate_indices=idx,
    )


def sample_contrastive(joint, n_samples, k, seed, chunk=None):
    """Draw contrastive batches from a discrete joint.

    Anchors are (x_s, x_t, z) triples from the joint; the k-1 negatives
    are fresh draws from P(x_t | z) at the anchor's z. Returns a list of
    ContrastiveBatch chunks so large runs stay within memory.
    """
    if k < 1:
        raise ContractError("need k >= 1 candidates")
    if n_samples < 1:
        raise ContractError("need at least one sample")
    rng = SplitMix64(seed)
    t = joint.table
    a, b, c = t.shape

    flat_cdf = np.cumsum(t.reshape(-1))
    flat_cdf[-1] = 1.0
    u = rng.uniform((n_samples,))
    cell = np.searchsorted(flat_cdf, u, side="right")
    xs, xt, z = np.unravel_index(cell, t.shape)

    pz = t.sum(axis=(0, 1))
    cond = np.zeros((c, b))
    for v in range(c):
        if pz[v] > 0:
            cond[v] = t[:, :, v].sum(axis=0) / pz[v]
    cond_cdf = np.cumsum(cond, axis=1)

    neg = np.zeros((n_samples, k - 1), dtype=np.int64)
    if k > 1:
        for v in range(c):
            mask = z == v
            m = int(mask.sum())
            if m == 0:
                continue
            cdf = cond_cdf[v].copy()
            cdf[-1] = 1.0
            draws = rng.uniform((m, k - 1))
            neg[mask] = np.searchsorted(cdf, draws.reshape(-1),
                                        side="right").reshape(m, k - 1)
    candidates = np.concatenate([xt[:, None], neg], axis=1)

    if chunk is None:
        chunk = n_samples
    batches = []
    for start in range(0, n_samples, chunk):
        sl = slice(start, min(start + chunk, n_samples))
        batches.append(ContrastiveBatch(
            sources=xs[sl], anchors=xt[sl], candidates=candidates[sl], z=z[sl]))
    return batches


# ---------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------

def load_joint(path):
    """Read a joint from delimited text: one cell per line,
    ``x_s,x_t,z,probability``. Unlisted cells are zero."""
    cells = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ParseError("expected x_s,x_t,z,probability", line=lineno)
            try:
                i, j, v = int(parts[0]), int(parts[1]), int(parts[2])
                p = float(parts[3])
            except ValueError:
                raise ParseError(f"bad field in {line!r}", line=lineno)
            if i < 0 or j < 0 or v < 0:
                raise ParseError("negative index", line=lineno)
            cells.append((i, j, v, p))
    if not cells:
        raise ContractError(f"no cells in joint file {path}")
    a = max(c[0] for c in cells) + 1
    b = max(c[1] for c in cells) + 1
    cc = max(c[2] for c in cells) + 1
    table = np.zeros((a, b, cc))
    for i, j, v, p in cells:
        table[i, j, v] += p
    return DiscreteJoint(table)


def save_joint(joint, path):
    a, b, c = joint.shape
    with open(path, "w", encoding="ascii") as fh:
        for i in range(a):
            for j in range(b):
                for v in range(c):
                    p = joint.table[i, j, v]
                    if p > 0:
                        fh.write(f"{i},{j},{v},{float(p)!r}\n")
