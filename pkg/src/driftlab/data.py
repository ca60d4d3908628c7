"""Synthetic covariate-shift generators and domain file ingestion.

Both generators follow the same discipline: a deterministic labeling
rule defined on input space (the same rule in both domains, up to the
known rigid motion between them), samples drawn class-first with
rejection so the stored labels always agree with the rule, and exact
per-class counts. That makes the shared-conditional contract checkable
by literally relabeling the data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, ParseError
from .tensorcore import SplitMix64

_DOMAIN_TAGS = ("source", "target")


@dataclass
class LabeledDomain:
    """Feature matrix with integer labels and a domain tag."""

    X: np.ndarray
    labels: np.ndarray
    domain: str

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.X.ndim != 2:
            raise DimensionError("feature matrix must be 2-D")
        if self.labels.shape[0] != self.X.shape[0]:
            raise ContractError("label count differs from row count")
        if self.labels.size and self.labels.min() < 0:
            raise ContractError("negative label")
        if self.domain not in _DOMAIN_TAGS:
            raise ContractError(f"domain tag must be one of {_DOMAIN_TAGS}")

    def __len__(self):
        return self.X.shape[0]


def _parse_ratio(ratio):
    """Accept 'a:b' strings, (a, b) pairs, or a class-0 fraction."""
    if isinstance(ratio, str):
        parts = ratio.split(":")
        if len(parts) != 2:
            raise ContractError(f"ratio must look like '3:7', got {ratio!r}")
        try:
            a, b = float(parts[0]), float(parts[1])
        except ValueError:
            raise ContractError(f"non-numeric ratio {ratio!r}")
    elif isinstance(ratio, (tuple, list)) and len(ratio) == 2:
        a, b = float(ratio[0]), float(ratio[1])
    else:
        frac = float(ratio)
        a, b = frac, 1.0 - frac
    if a <= 0 or b <= 0:
        raise ContractError("degenerate class ratio: both sides must be positive")
    return a / (a + b)


def _class_counts(n, frac0):
    c0 = int(round(n * frac0))
    c0 = min(max(c0, 1), n - 1)
    return c0, n - c0


# ---------------------------------------------------------------------
# two moons
# ---------------------------------------------------------------------

def _arc_distance(points):
    """Distance from each point to the upper unit half-circle arc."""
    x, y = points[:, 0], points[:, 1]
    r = np.hypot(x, y)
    on_arc = y >= 0
    radial = np.abs(r - 1.0)
    d_end = np.minimum(np.hypot(x - 1.0, y), np.hypot(x + 1.0, y))
    return np.where(on_arc, radial, d_end)


def two_moons_label_rule(points, rotation_deg=0.0):
    """Deterministic labels: nearest ideal moon arc, evaluated in the
    pre-rotation frame. Ties go to class 0."""
    p = np.asarray(points, dtype=np.float64)
    if rotation_deg:
        p = p @ _rotation(rotation_deg)  # inverse rotation of column vectors
    d0 = _arc_distance(p)
    flipped = np.column_stack([1.0 - p[:, 0], 0.5 - p[:, 1]])
    d1 = _arc_distance(flipped)
    return (d1 < d0).astype(np.int64)


def _rotation(deg):
    t = np.deg2rad(deg)
    c, s = np.cos(t), np.sin(t)
    # applied as p @ R, rows as points; inverse of the forward rotation
    return np.array([[c, -s], [s, c]])


def _sample_moon_class(rng, cls, count, noise_sigma):
    """Rejection-sample noisy points whose rule label equals ``cls``."""
    accepted = []
    have = 0
    while have < count:
        draw = max(count - have, 8) * 2
        t = rng.uniform((draw,)) * np.pi
        base = np.column_stack([np.cos(t), np.sin(t)])
        if cls == 1:
            base = np.column_stack([1.0 - base[:, 0], 0.5 - base[:, 1]])
        pts = base + noise_sigma * rng.normal((draw, 2))
        keep = two_moons_label_rule(pts) == cls
        pts = pts[keep]
        accepted.append(pts)
        have += pts.shape[0]
    return np.concatenate(accepted)[:count]


def gen_two_moons_shift(n=500, rotation_deg=30.0, noise_sigma=0.1,
                        class_ratio_t="5:5", seed=0):
    """Two interleaved half-circles; the target domain is the same
    manifold rigidly rotated, sampled with its own class ratio.

    Labels in both domains come from the nearest-arc rule in the
    pre-rotation frame, so relabeling either domain with the shared
    rule reproduces the stored labels exactly.
    """
    if n < 4:
        raise ContractError("need n >= 4")
    if not (0 <= rotation_deg < 90):
        raise ContractError("rotation must lie in [0, 90) degrees")
    if noise_sigma < 0:
        raise ContractError("noise_sigma must be nonnegative")
    frac0 = _parse_ratio(class_ratio_t)

    rng = SplitMix64(seed)
    src_rng, tgt_rng = rng.spawn(1), rng.spawn(2)

    s0, s1 = _class_counts(n, 0.5)
    xs = np.concatenate([
        _sample_moon_class(src_rng, 0, s0, noise_sigma),
        _sample_moon_class(src_rng, 1, s1, noise_sigma),
    ])
    ys = np.concatenate([np.zeros(s0, np.int64), np.ones(s1, np.int64)])

    t0, t1 = _class_counts(n, frac0)
    pre = np.concatenate([
        _sample_moon_class(tgt_rng, 0, t0, noise_sigma),
        _sample_moon_class(tgt_rng, 1, t1, noise_sigma),
    ])
    yt = np.concatenate([np.zeros(t0, np.int64), np.ones(t1, np.int64)])
    rot = _rotation(rotation_deg).T  # forward rotation for row vectors
    xt = pre @ rot

    return (LabeledDomain(xs, ys, "source"),
            LabeledDomain(xt, yt, "target"))


# ---------------------------------------------------------------------
# gaussian shift
# ---------------------------------------------------------------------

def gaussian_label_rule(points, means, covariances):
    """Equal-prior density argmax over the class Gaussians; ties to the
    lowest class index."""
    p = np.asarray(points, dtype=np.float64)
    scores = []
    for mean, cov in zip(means, covariances):
        diff = p - mean
        inv = np.linalg.inv(cov)
        _, logdet = np.linalg.slogdet(cov)
        maha = (diff @ inv * diff).sum(axis=1)
        scores.append(-0.5 * (maha + logdet))
    return np.argmax(np.column_stack(scores), axis=1).astype(np.int64)


def _check_spd(cov):
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ContractError("covariance must be square")
    if not np.allclose(cov, cov.T, atol=1e-10):
        raise ContractError("covariance must be symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ContractError("covariance must be positive-definite")


def _sample_gaussian_class(rng, mean, chol, cls, count, means, covariances):
    accepted = []
    have = 0
    d = mean.shape[0]
    while have < count:
        draw = max(count - have, 8) * 2
        pts = mean + rng.normal((draw, d)) @ chol.T
        keep = gaussian_label_rule(pts, means, covariances) == cls
        pts = pts[keep]
        accepted.append(pts)
        have += pts.shape[0]
    return np.concatenate(accepted)[:count]


def gen_gaussian_shift(means, covariances, shift_vector, n=500, seed=0):
    """Per-class Gaussians; the target is every class conditional
    translated by the same shift vector.

    Labels follow the equal-prior Bayes rule in the pre-shift frame,
    sampled class-first with rejection so stored labels and rule agree.
    """
    means = [np.asarray(m, dtype=np.float64) for m in means]
    if len(means) < 2:
        raise ContractError("need at least two classes")
    chols = [_check_spd(c) for c in covariances]
    covariances = [np.asarray(c, dtype=np.float64) for c in covariances]
    shift = np.asarray(shift_vector, dtype=np.float64)
    if shift.shape != means[0].shape:
        raise DimensionError("shift vector dimension mismatch")
    if n < len(means):
        raise ContractError("need at least one sample per class")

    rng = SplitMix64(seed)
    src_rng, tgt_rng = rng.spawn(1), rng.spawn(2)
    c = len(means)
    counts = [n // c + (1 if i < n % c else 0) for i in range(c)]

    def build(sub_rng, offset, tag):
        xs, ys = [], []
        for cls in range(c):
            pts = _sample_gaussian_class(sub_rng, means[cls], chols[cls],
                                         cls, counts[cls], means, covariances)
            xs.append(pts + offset)
            ys.append(np.full(counts[cls], cls, np.int64))
        return LabeledDomain(np.concatenate(xs), np.concatenate(ys), tag)

    return (build(src_rng, 0.0, "source"),
            build(tgt_rng, shift, "target"))


# ---------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------

_DELIMS = {"csv": ",", "tsv": "\t"}


def save_domain(domain, path, format="csv"):
    if format not in _DELIMS:
        raise ContractError(f"unknown format {format!r}")
    sep = _DELIMS[format]
    d = domain.X.shape[1]
    header = sep.join([f"f{i + 1}" for i in range(d)] + ["label", "domain"])
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header + "\n")
        for row, label in zip(domain.X, domain.labels):
            fields = [repr(float(v)) for v in row]
            fh.write(sep.join(fields + [str(int(label)), domain.domain]) + "\n")


def load_domain(path, format="csv"):
    """Read a delimited domain file with header ``f1,...,fd,label,domain``."""
    if format not in _DELIMS:
        raise ContractError(f"unknown format {format!r}")
    sep = _DELIMS[format]
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    lines = [(i + 1, ln) for i, ln in enumerate(lines)
             if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ContractError(f"empty domain file {path}")
    header_no, header = lines[0]
    cols = header.split(sep)
    if len(cols) < 3 or cols[-2] != "label" or cols[-1] != "domain":
        raise ParseError(f"bad header {header!r}: expected f1..fd,label,domain",
                         line=header_no)
    d = len(cols) - 2
    if cols[:d] != [f"f{i + 1}" for i in range(d)]:
        raise ParseError(f"feature columns must be f1..f{d}", line=header_no)
    rows, labels, tags = [], [], []
    for lineno, ln in lines[1:]:
        parts = ln.split(sep)
        if len(parts) != d + 2:
            raise ParseError(f"expected {d + 2} fields, got {len(parts)}",
                             line=lineno)
        try:
            rows.append([float(v) for v in parts[:d]])
            labels.append(int(parts[d]))
        except ValueError:
            raise ParseError(f"malformed row {ln!r}", line=lineno)
        tags.append(parts[d + 1])
    if not rows:
        raise ContractError(f"no data rows in {path}")
    if any(v < 0 for v in labels):
        raise ContractError("label out of range: negative")
    tag = tags[0]
    if any(t != tag for t in tags):
        raise ParseError("mixed domain tags in one file", line=lines[1][0])
    return LabeledDomain(np.array(rows), np.array(labels), tag)
