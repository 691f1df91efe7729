"""Degree statistics, heavy-tail fitters, and correlation estimators.

Three empirical laws are fit here, all as weighted least squares in log
space driven by deterministic grid searches with local refinement:

* power-law window scaling, quantity = c * n_valid**gamma;
* Zipf-Mandelbrot degree frequency, p(d) proportional to 1/(d+delta)**lambda;
* modified Cauchy self-correlation decay, C(t) = beta/(beta + t**alpha).

No stochastic optimizer is involved, so every fit is reproducible
bit-for-bit from the same inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

# Parameter search bounds. Estimates are clamped to these closed boxes.
DELTA_BOUNDS = (-0.99, 10.0)
LAMBDA_BOUNDS = (1e-6, 6.0)
ALPHA_BOUNDS = (1e-3, 2.0)
LOG10_BETA_BOUNDS = (-6.0, 6.0)
GAMMA_BOUNDS = (0.0, 1.0)

_REFINE_TOL = 1e-8
_MAX_EVALS = 10_000

EXACT_BIN_LIMIT = 1_000_000
LOG_BIN_RATIO = 2.0 ** 0.125


class FitError(ValueError):
    """A fit could not be produced from the given data."""


@dataclass(frozen=True)
class DegreeHistogram:
    """Degree counts with exact unit bins, log-binned past EXACT_BIN_LIMIT.

    ``bins`` maps a bin's representative degree to its occupancy count;
    ``widths`` maps the same keys to the number of integer degrees the
    bin covers (1 for exact bins).  Counts of zero are never stored.
    """

    bins: dict[int, int]
    widths: dict[int, int]
    total: int

    def items(self) -> list[tuple[int, int, int]]:
        """(degree, count, width) triples in ascending degree order."""
        return [(d, self.bins[d], self.widths[d]) for d in sorted(self.bins)]

    def probabilities(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Bin centers, estimated probability mass per degree, and counts."""
        triples = self.items()
        d = np.array([t[0] for t in triples], dtype=float)
        c = np.array([t[1] for t in triples], dtype=float)
        w = np.array([t[2] for t in triples], dtype=float)
        return d, c / (self.total * w), c


def histogram(values: Iterable[int] | np.ndarray) -> DegreeHistogram:
    """Bin positive integer degrees.

    Degrees up to EXACT_BIN_LIMIT get one bin each; larger degrees share
    geometric bins of ratio LOG_BIN_RATIO whose representative is the
    rounded geometric center.  Total occupancy equals the input count.
    """
    arr = np.asarray(values if isinstance(values, np.ndarray) else list(values))
    if arr.size == 0:
        raise ValueError("cannot build a histogram from no values")
    if arr.dtype == object:
        arr = np.array([int(v) for v in arr.tolist()], dtype=np.int64)
    else:
        arr = arr.astype(np.int64, copy=False)
    if int(arr.min()) < 1:
        raise ValueError("degrees must be >= 1")
    uniq, counts = np.unique(arr, return_counts=True)
    bins: dict[int, int] = {}
    widths: dict[int, int] = {}
    exact = uniq <= EXACT_BIN_LIMIT
    for d, c in zip(uniq[exact].tolist(), counts[exact].tolist()):
        bins[int(d)] = int(c)
        widths[int(d)] = 1
    tail_d = uniq[~exact]
    tail_c = counts[~exact]
    if len(tail_d):
        log_ratio = math.log(LOG_BIN_RATIO)
        idx = np.floor(np.log(tail_d / EXACT_BIN_LIMIT) / log_ratio).astype(np.int64)
        for j in np.unique(idx).tolist():
            lo = int(math.ceil(EXACT_BIN_LIMIT * LOG_BIN_RATIO**j))
            hi = int(math.ceil(EXACT_BIN_LIMIT * LOG_BIN_RATIO ** (j + 1))) - 1
            lo = max(lo, EXACT_BIN_LIMIT + 1)
            rep = int(round(math.sqrt(lo * hi)))
            members = idx == j
            bins[rep] = bins.get(rep, 0) + int(tail_c[members].sum())
            widths[rep] = hi - lo + 1
    return DegreeHistogram(bins=bins, widths=widths, total=int(counts.sum()))


@dataclass(frozen=True)
class ZipfMandelbrotFit:
    """p(d) = scale / (d + delta)**lambda_, fitted in log space."""

    delta: float
    lambda_: float
    scale: float
    residual: float

    def to_json_dict(self) -> dict:
        return {
            "delta": self.delta,
            "lambda": self.lambda_,
            "scale": self.scale,
            "residual": self.residual,
        }


@dataclass(frozen=True)
class ScalingFit:
    """quantity = coefficient * n_valid**gamma; gamma clamped to [0, 1]."""

    gamma: float
    coefficient: float
    residual: float
    raw_gamma: float
    clamped: bool

    def to_json_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "coefficient": self.coefficient,
            "residual": self.residual,
            "raw_gamma": self.raw_gamma,
            "clamped": self.clamped,
        }


@dataclass(frozen=True)
class CauchyFit:
    """C(t) = beta / (beta + t**alpha); t_half is where C crosses one half."""

    alpha: float
    beta: float
    residual: float

    @property
    def t_half(self) -> float:
        return self.beta ** (1.0 / self.alpha)

    def to_json_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "t_half": self.t_half,
            "residual": self.residual,
        }


class CurvePoint(NamedTuple):
    x: float
    value: float
    n: int


@dataclass(frozen=True)
class CorrelationCurve:
    """Estimated probabilities along an axis (lag, or log2-degree bucket).

    ``skipped`` lists window indices excluded for having no sources.
    """

    points: tuple[CurvePoint, ...]
    skipped: tuple[int, ...] = ()

    def xs(self) -> np.ndarray:
        return np.array([p.x for p in self.points], dtype=float)

    def values(self) -> np.ndarray:
        return np.array([p.value for p in self.points], dtype=float)


def _weighted_line(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[float, float, float]:
    """Weighted least-squares line.  Returns (slope, intercept, sxx)."""
    total = w.sum()
    xb = float((w * x).sum() / total)
    yb = float((w * y).sum() / total)
    dx = x - xb
    sxx = float((w * dx * dx).sum())
    if sxx <= 0.0:
        return 0.0, yb, 0.0
    slope = float((w * dx * (y - yb)).sum() / sxx)
    return slope, yb - slope * xb, sxx


def _zm_objective(delta: float, d: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Best (lambda, log scale) for a fixed delta, plus the weighted SSE."""
    x = np.log(d + delta)
    slope, _, sxx = _weighted_line(x, y, w)
    if sxx <= 0.0:
        return math.inf, LAMBDA_BOUNDS[0], 0.0
    lam = float(np.clip(-slope, *LAMBDA_BOUNDS))
    total = w.sum()
    log_scale = float((w * (y + lam * x)).sum() / total)
    r = y - (log_scale - lam * x)
    return float((w * r * r).sum() / total), lam, log_scale


def fit_zipf_mandelbrot(hist: DegreeHistogram) -> ZipfMandelbrotFit:
    """Fit p(d) = scale/(d+delta)**lambda to a degree histogram.

    Weighted log-space least squares over bin centers, weights equal to
    bin counts.  delta is found by deterministic grid search with
    interval refinement; lambda and scale are closed-form given delta.
    """
    d, p, w = hist.probabilities()
    if len(d) < 3:
        raise FitError(f"zipf-mandelbrot fit needs >= 3 distinct degrees, got {len(d)}")
    y = np.log(p)
    lo, hi = DELTA_BOUNDS
    evals = 0
    best = (math.inf, lo)
    while evals < _MAX_EVALS:
        grid = np.linspace(lo, hi, 33)
        scores = []
        for delta in grid:
            obj, _, _ = _zm_objective(float(delta), d, y, w)
            scores.append(obj)
        evals += len(grid)
        i = int(np.argmin(scores))
        if scores[i] <= best[0]:
            best = (scores[i], float(grid[i]))
        width = hi - lo
        lo = max(DELTA_BOUNDS[0], float(grid[max(i - 1, 0)]))
        hi = min(DELTA_BOUNDS[1], float(grid[min(i + 1, len(grid) - 1)]))
        if width < _REFINE_TOL:
            break
    delta = best[1]
    obj, lam, log_scale = _zm_objective(delta, d, y, w)
    return ZipfMandelbrotFit(
        delta=delta, lambda_=lam, scale=math.exp(log_scale), residual=math.sqrt(obj)
    )


def fit_window_scaling(samples: Sequence[tuple[int, float]]) -> ScalingFit:
    """Fit quantity = c * n_valid**gamma over (n_valid, quantity) samples.

    Closed-form least squares on log-log axes.  Needs >= 3 distinct
    window sizes spanning at least a factor of 4; all quantities must be
    positive.  gamma outside [0, 1] is clamped, the raw slope kept.
    """
    if not samples:
        raise FitError("window-scaling fit got no samples")
    sizes = sorted({int(n) for n, _ in samples})
    if len(sizes) < 3:
        raise FitError(f"window-scaling fit needs >= 3 distinct window sizes, got {len(sizes)}")
    if sizes[-1] < 4 * sizes[0]:
        raise FitError(
            f"window-scaling fit needs a 4x size span, got {sizes[0]}..{sizes[-1]}"
        )
    if any(v <= 0 for _, v in samples):
        raise FitError("window-scaling fit needs positive quantities")
    x = np.log(np.array([float(n) for n, _ in samples]))
    y = np.log(np.array([float(v) for _, v in samples]))
    w = np.ones_like(x)
    slope, intercept, _ = _weighted_line(x, y, w)
    gamma = float(np.clip(slope, *GAMMA_BOUNDS))
    clamped = gamma != slope
    if clamped:
        intercept = float(np.mean(y - gamma * x))
    r = y - (intercept + gamma * x)
    return ScalingFit(
        gamma=gamma,
        coefficient=math.exp(intercept),
        residual=float(np.sqrt(np.mean(r * r))),
        raw_gamma=float(slope),
        clamped=clamped,
    )


def _as_sorted_ids(values) -> np.ndarray:
    """Sorted unique id array; object dtype when ids exceed 64 bits."""
    if isinstance(values, np.ndarray) and values.dtype != object:
        return np.unique(values.astype(np.uint64, copy=False))
    items = sorted({int(v) for v in values})
    try:
        return np.array(items, dtype=np.uint64)
    except OverflowError:
        out = np.empty(len(items), dtype=object)
        out[:] = items
        return out


def _intersection_size(a: np.ndarray, b: np.ndarray) -> int:
    if a.dtype == object or b.dtype == object:
        return len(frozenset(a.tolist()) & frozenset(b.tolist()))
    return len(np.intersect1d(a, b, assume_unique=True))


def self_correlation(window_sets: Sequence, max_lag: int) -> CorrelationCurve:
    """Probability that a window's source is present again t windows later.

    For each lag t, the per-window fraction |S_w & S_{w+t}| / |S_w| is
    averaged over all reference windows w.  Lag 0 is identically 1.
    Windows with no sources are skipped and reported; a lag with no
    usable reference windows is omitted.
    """
    if max_lag < 1:
        raise ValueError(f"max_lag must be >= 1, got {max_lag}")
    if len(window_sets) < 2:
        raise ValueError("need at least 2 windows")
    if max_lag >= len(window_sets):
        raise ValueError(f"max_lag {max_lag} needs more than {len(window_sets)} windows")
    sets = [_as_sorted_ids(s) for s in window_sets]
    sizes = [len(s) for s in sets]
    skipped = tuple(i for i, n in enumerate(sizes) if n == 0)
    usable = [i for i, n in enumerate(sizes) if n > 0]
    if not usable:
        raise ValueError("every window is empty")
    points = [CurvePoint(0.0, 1.0, sum(sizes[i] for i in usable))]
    for t in range(1, max_lag + 1):
        refs = [w for w in usable if w + t < len(sets)]
        if not refs:
            continue
        ratios = [
            _intersection_size(sets[w], sets[w + t]) / sizes[w] for w in refs
        ]
        trials = sum(sizes[w] for w in refs)
        points.append(CurvePoint(float(t), float(np.mean(ratios)), trials))
    if len(points) == 1:
        raise ValueError("no usable reference windows at any lag")
    return CorrelationCurve(points=tuple(points), skipped=skipped)


def _cauchy_objective(
    alpha: float, log10_beta: float, t: np.ndarray, y: np.ndarray, w: np.ndarray
) -> float:
    beta = 10.0**log10_beta
    m = math.log(beta) - np.log(beta + t**alpha)
    r = y - m
    return float((w * r * r).sum())


def fit_modified_cauchy(curve: CorrelationCurve) -> CauchyFit:
    """Fit C(t) = beta/(beta + t**alpha) to a self-correlation curve.

    Weighted log-space least squares over points with lag >= 1 and a
    positive probability; weights are the per-lag trial counts.  The
    search is a coarse (alpha, log10 beta) grid followed by compass
    refinement, both deterministic.
    """
    pts = [p for p in curve.points if p.x >= 1 and p.value > 0.0]
    if len(pts) < 3:
        raise FitError(f"modified-cauchy fit needs >= 3 usable points, got {len(pts)}")
    t = np.array([p.x for p in pts], dtype=float)
    y = np.log(np.array([p.value for p in pts], dtype=float))
    w = np.array([max(p.n, 1) for p in pts], dtype=float)
    w = w / w.sum()

    a_grid = np.linspace(ALPHA_BOUNDS[0], ALPHA_BOUNDS[1], 64)
    b_grid = np.linspace(LOG10_BETA_BOUNDS[0], LOG10_BETA_BOUNDS[1], 49)
    best = (math.inf, float(a_grid[0]), float(b_grid[0]))
    for alpha in a_grid:
        ta = t ** float(alpha)
        betas = 10.0**b_grid
        m = np.log(betas)[:, None] - np.log(betas[:, None] + ta[None, :])
        obj = ((y[None, :] - m) ** 2 * w[None, :]).sum(axis=1)
        j = int(np.argmin(obj))
        if obj[j] < best[0]:
            best = (float(obj[j]), float(alpha), float(b_grid[j]))

    score, alpha, log10_beta = best
    step_a = float(a_grid[1] - a_grid[0])
    step_b = float(b_grid[1] - b_grid[0])
    evals = 0
    moves = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1))
    while (step_a > _REFINE_TOL or step_b > _REFINE_TOL) and evals < _MAX_EVALS:
        improved = False
        for da, db in moves:
            na = float(np.clip(alpha + da * step_a, *ALPHA_BOUNDS))
            nb = float(np.clip(log10_beta + db * step_b, *LOG10_BETA_BOUNDS))
            if na == alpha and nb == log10_beta:
                continue
            v = _cauchy_objective(na, nb, t, y, w)
            evals += 1
            if v < score:
                score, alpha, log10_beta = v, na, nb
                improved = True
                break
        if not improved:
            step_a /= 2.0
            step_b /= 2.0
    return CauchyFit(alpha=alpha, beta=10.0**log10_beta, residual=math.sqrt(score))


def cross_correlation(
    observer_a: Mapping[int, Mapping[int, int]] | Iterable[tuple[int, Mapping[int, int]]],
    observer_b: Mapping[int, Iterable[int]] | Iterable[tuple[int, Iterable[int]]],
) -> CorrelationCurve:
    """Fraction of observer-A sources also seen by observer B, by traffic size.

    observer_a maps window index -> {source: packets}; observer_b maps
    window index -> source set.  Only window indices present on both
    sides are used.  Each source contributes one trial at the bucket
    k = floor(log2(d)) of its total aligned-window packet count d.
    """
    a = dict(observer_a.items() if isinstance(observer_a, Mapping) else observer_a)
    b = dict(observer_b.items() if isinstance(observer_b, Mapping) else observer_b)
    aligned = sorted(set(a) & set(b))
    if not aligned:
        raise ValueError("observers share no aligned windows")
    totals: dict[int, int] = {}
    for wdx in aligned:
        for s, c in a[wdx].items():
            if c < 1:
                raise ValueError(f"non-positive packet count for source {s}")
            totals[s] = totals.get(s, 0) + int(c)
    if not totals:
        raise ValueError("observer A saw no sources in the aligned windows")
    seen_b: set[int] = set()
    for wdx in aligned:
        seen_b.update(int(v) for v in b[wdx])
    buckets: dict[int, list[int]] = {}
    for s, d in totals.items():
        buckets.setdefault(d.bit_length() - 1, []).append(s)
    points = []
    for k in sorted(buckets):
        members = buckets[k]
        hits = sum(1 for s in members if s in seen_b)
        points.append(CurvePoint(float(k), hits / len(members), len(members)))
    return CorrelationCurve(points=tuple(points))


def write_histogram_tsv(path: str | Path, hist: DegreeHistogram) -> None:
    """TSV layout x/value/sigma/n: degree, count, sqrt(count), bin width."""
    lines = ["x\tvalue\tsigma\tn"]
    for d, c, width in hist.items():
        lines.append(f"{d}\t{c}\t{math.sqrt(c)!r}\t{width}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_curve_tsv(
    path: str | Path, curve: CorrelationCurve, *, model: Sequence[float] | None = None
) -> None:
    """TSV layout x/value/sigma/n, sigma the binomial standard error.

    ``model`` optionally appends a column of model predictions aligned
    with the curve points.
    """
    header = "x\tvalue\tsigma\tn" + ("\tmodel" if model is not None else "")
    lines = [header]
    for i, p in enumerate(curve.points):
        sigma = math.sqrt(p.value * (1.0 - p.value) / p.n) if p.n > 0 else 0.0
        row = f"{p.x!r}\t{p.value!r}\t{sigma!r}\t{p.n}"
        if model is not None:
            row += f"\t{model[i]!r}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n")
