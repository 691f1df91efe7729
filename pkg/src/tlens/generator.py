"""Synthetic packet streams whose statistics follow the fitted laws.

Sources draw a per-window intensity from a Zipf-Mandelbrot law and
revisit windows under a renewal process whose gap distribution is
derived from the modified Cauchy curve, so the measured self-correlation
matches beta/(beta + t**alpha) without bias at every lag.  Windows are
padded to exactly n_valid packets with background sources (or trimmed),
and every adjustment is recorded in a ground-truth sidecar.

Id layout keeps the populations disjoint: primary sources start at 1,
background fill at 2**40, second-observer fill at 2**44, destinations
at 2**50.
"""

from __future__ import annotations

import gzip
import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from tlens.ingest import BinaryWriter
from tlens.stats import DELTA_BOUNDS, LAMBDA_BOUNDS

SOURCE_ID_BASE = 1
BACKGROUND_ID_BASE = 1 << 40
OBSERVER_B_FILL_BASE = 1 << 44
DEST_ID_BASE = 1 << 50

WINDOW_SPAN_US = 1_000_000


class ScenarioError(ValueError):
    """The scenario cannot be generated as configured."""


@dataclass(frozen=True)
class SyntheticScenario:
    """Knobs of one synthetic site.

    Degree law: per-source window intensity ~ ZM(zm_delta, zm_lambda) on
    [1, intensity_max].  Revisit law: renewal gaps reproduce the curve
    cauchy_beta/(cauchy_beta + t**cauchy_alpha); alpha above 1 would
    break the renewal construction and is rejected.  Destinations are a
    ZM-popular pool.  background_pool = 0 disables window top-up, making
    underfull windows a hard error.
    """

    n_sources: int
    n_windows: int
    n_valid: int
    seed: int
    zm_delta: float = 1.0
    zm_lambda: float = 2.0
    intensity_max: int = 10_000
    cauchy_alpha: float = 0.8
    cauchy_beta: float = 10.0
    n_destinations: int = 1 << 16
    dest_delta: float = 0.0
    dest_lambda: float = 1.2
    background_pool: int = 1 << 16

    def __post_init__(self):
        for name in ("n_sources", "n_windows", "n_valid", "intensity_max", "n_destinations"):
            if getattr(self, name) < 1:
                raise ScenarioError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.seed < 0:
            raise ScenarioError(f"seed must be >= 0, got {self.seed}")
        if self.background_pool < 0:
            raise ScenarioError(f"background_pool must be >= 0, got {self.background_pool}")
        for dname, lname, delta, lam in (
            ("zm_delta", "zm_lambda", self.zm_delta, self.zm_lambda),
            ("dest_delta", "dest_lambda", self.dest_delta, self.dest_lambda),
        ):
            # strict at -1: (d + delta)**-lambda blows up at d = 1
            if not DELTA_BOUNDS[0] - 0.01 < delta <= DELTA_BOUNDS[1]:
                raise ScenarioError(f"{dname} {delta} outside fitter bounds {DELTA_BOUNDS}")
            if not 0.0 < lam <= LAMBDA_BOUNDS[1]:
                raise ScenarioError(f"{lname} {lam} outside fitter bounds {LAMBDA_BOUNDS}")
        if not 0.0 < self.cauchy_alpha <= 1.0:
            raise ScenarioError(
                f"cauchy_alpha must be in (0, 1] for a renewal-compatible curve, "
                f"got {self.cauchy_alpha}"
            )
        if not 0.0 < self.cauchy_beta <= 10.0 ** 6:
            raise ScenarioError(f"cauchy_beta {self.cauchy_beta} outside fitter bounds")
        if self.n_sources > BACKGROUND_ID_BASE - SOURCE_ID_BASE:
            raise ScenarioError("n_sources collides with the background id range")


class ZipfMandelbrotSampler:
    """Exact inverse-CDF sampler of ZM(delta, lambda) on degrees 1..d_max."""

    def __init__(self, delta: float, lambda_: float, d_max: int):
        if d_max < 1:
            raise ValueError(f"d_max must be >= 1, got {d_max}")
        if delta <= -1.0:
            raise ValueError(f"delta must be > -1, got {delta}")
        if lambda_ <= 0.0:
            raise ValueError(f"lambda must be > 0, got {lambda_}")
        d = np.arange(1, d_max + 1, dtype=float)
        mass = (d + delta) ** (-lambda_)
        self._pmf = mass / mass.sum()
        self._cdf = np.cumsum(self._pmf)
        self._cdf[-1] = 1.0
        self.d_max = d_max

    @property
    def pmf(self) -> np.ndarray:
        """Exact probability mass over degrees 1..d_max (copy)."""
        return self._pmf.copy()

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray | int:
        u = rng.random(size)
        out = np.searchsorted(self._cdf, u, side="right") + 1
        if size is None:
            return int(out)
        return out.astype(np.int64)


def sample_zipf_mandelbrot(
    delta: float, lambda_: float, d_max: int, rng: np.random.Generator
) -> int:
    """Draw one ZM degree. For batches, build a ZipfMandelbrotSampler."""
    return ZipfMandelbrotSampler(delta, lambda_, d_max).sample(rng)


def renewal_gap_pmf(alpha: float, beta: float, horizon: int) -> np.ndarray:
    """Gap distribution whose renewal process revisits with C(t) = beta/(beta+t**alpha).

    Returns f where f[t] = P(next presence exactly t windows later),
    f[0] = 0, t up to horizon.  The remaining mass 1 - sum(f) is the
    chance the source never returns within the horizon.  The recursion
    inverts the renewal equation; C must be log-convex (alpha <= 1) for
    the result to be a distribution.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if beta <= 0.0:
        raise ValueError(f"beta must be > 0, got {beta}")
    t = np.arange(horizon + 1, dtype=float)
    u = beta / (beta + t**alpha)
    f = np.zeros(horizon + 1)
    for k in range(1, horizon + 1):
        conv = float(np.dot(f[1:k], u[k - 1 : 0 : -1])) if k > 1 else 0.0
        val = u[k] - conv
        if val < -1e-9:
            raise ValueError(f"curve is not renewal-compatible at gap {k} ({val})")
        f[k] = max(val, 0.0)
    return f


def simulate_presence(
    n_sources: int,
    n_windows: int,
    alpha: float,
    beta: float,
    rng: np.random.Generator,
    anchors: np.ndarray | None = None,
) -> list[np.ndarray]:
    """Per-window arrays of present source indices under the renewal process.

    Each source first appears at a uniform anchor window, then returns
    after i.i.d. gaps from renewal_gap_pmf until it dies or the horizon
    ends.  Conditioned on presence at any window w, the chance of
    presence at w+t is exactly beta/(beta + t**alpha).
    """
    if anchors is None:
        anchors = rng.integers(0, n_windows, size=n_sources, dtype=np.int64)
    else:
        anchors = np.asarray(anchors, dtype=np.int64)
        if len(anchors) != n_sources or (
            len(anchors) and (anchors.min() < 0 or anchors.max() >= n_windows)
        ):
            raise ValueError("anchors must give one valid window index per source")
    f = renewal_gap_pmf(alpha, beta, n_windows)
    cum = np.cumsum(f[1:])
    total = float(cum[-1]) if len(cum) else 0.0
    pos = anchors.copy()
    win_parts = [anchors.copy()]
    src_parts = [np.arange(n_sources, dtype=np.int64)]
    active = np.arange(n_sources, dtype=np.int64)
    while len(active):
        u = rng.random(len(active))
        gaps = np.searchsorted(cum, u, side="right") + 1
        new_pos = pos[active] + gaps
        alive = (u < total) & (new_pos < n_windows)
        pos[active] = new_pos
        active = active[alive]
        if len(active):
            win_parts.append(pos[active].copy())
            src_parts.append(active.copy())
    wins = np.concatenate(win_parts)
    srcs = np.concatenate(src_parts)
    order = np.argsort(wins, kind="stable")
    wins = wins[order]
    srcs = srcs[order]
    edges = np.searchsorted(wins, np.arange(n_windows + 1))
    return [srcs[edges[w] : edges[w + 1]] for w in range(n_windows)]


@dataclass
class StreamGroundTruth:
    """What generate_stream actually emitted, beyond the packets."""

    path: Path
    sidecar_path: Path
    fmt: str
    scenario: SyntheticScenario
    natural: list[int]
    trimmed: list[int]
    topped: list[int]
    realized_source_packets: np.ndarray
    presence: list[np.ndarray]


@dataclass
class TwoObserverTruth:
    """Ground truth of an aligned two-vantage-point pair."""

    stream: StreamGroundTruth
    path_b: Path
    sidecar_b_path: Path
    n_valid_b: int
    visible: np.ndarray
    visible_count: int


class _StreamSink:
    """One open output stream, CSV (gzip by suffix) or binary."""

    def __init__(self, path: Path, fmt: str):
        if fmt not in ("csv", "binary"):
            raise ValueError(f"unknown format {fmt!r}")
        self.fmt = fmt
        if fmt == "binary":
            self._writer = BinaryWriter(path)
            self._text = None
        else:
            raw = gzip.open(path, "wb") if path.suffix == ".gz" else open(path, "wb")
            self._text = io.TextIOWrapper(raw, encoding="utf-8", newline="")
            self._writer = None

    def write(self, ts: np.ndarray, src: np.ndarray, dst: np.ndarray) -> None:
        if self._writer is not None:
            self._writer.write(ts, src, dst)
        else:
            pd.DataFrame({"t": ts, "s": src, "d": dst}).to_csv(
                self._text, index=False, header=False
            )

    def close(self) -> None:
        if self._writer is not None:
            self._writer.close()
        else:
            self._text.close()


def _window_timestamps(window: int, n: int) -> np.ndarray:
    base = np.uint64(window * WINDOW_SPAN_US)
    offsets = (np.arange(n, dtype=np.uint64) * np.uint64(WINDOW_SPAN_US)) // np.uint64(n)
    return base + offsets


def _sidecar_path(path: Path) -> Path:
    return Path(str(path) + ".truth.json")


def generate_stream(
    scenario: SyntheticScenario, path: str | Path, *, fmt: str = "csv"
) -> StreamGroundTruth:
    """Write a synthetic capture of n_windows * n_valid packets.

    Every window is adjusted to exactly n_valid packets: overfull
    windows are trimmed uniformly at random, underfull ones topped up
    with background-pool sources.  Both adjustments are counted per
    window in the ``<path>.truth.json`` sidecar.  Output is byte-stable
    for a fixed scenario.
    """
    path = Path(path)
    rng = np.random.default_rng(scenario.seed)
    intensity = ZipfMandelbrotSampler(
        scenario.zm_delta, scenario.zm_lambda, scenario.intensity_max
    ).sample(rng, scenario.n_sources)
    presence = simulate_presence(
        scenario.n_sources, scenario.n_windows, scenario.cauchy_alpha, scenario.cauchy_beta, rng
    )
    dest_sampler = ZipfMandelbrotSampler(
        scenario.dest_delta, scenario.dest_lambda, scenario.n_destinations
    )
    realized = np.zeros(scenario.n_sources, dtype=np.int64)
    natural: list[int] = []
    trimmed: list[int] = []
    topped: list[int] = []
    sink = _StreamSink(path, fmt)
    try:
        for w in range(scenario.n_windows):
            present = presence[w]
            reps = intensity[present]
            src = np.repeat((SOURCE_ID_BASE + present).astype(np.uint64), reps)
            nat = len(src)
            natural.append(nat)
            if nat > scenario.n_valid:
                keep = rng.permutation(nat)[: scenario.n_valid]
                src = src[keep]
                trimmed.append(nat - scenario.n_valid)
                topped.append(0)
            elif nat < scenario.n_valid:
                deficit = scenario.n_valid - nat
                if scenario.background_pool == 0:
                    need = math.ceil(scenario.n_sources * scenario.n_valid / max(nat, 1))
                    raise ScenarioError(
                        f"window {w} holds {nat} packets < n_valid {scenario.n_valid} and "
                        f"background top-up is disabled; roughly {need} sources would fill it"
                    )
                fill = BACKGROUND_ID_BASE + rng.integers(
                    0, scenario.background_pool, size=deficit, dtype=np.int64
                )
                src = np.concatenate([src, fill.astype(np.uint64)])
                trimmed.append(0)
                topped.append(deficit)
            else:
                trimmed.append(0)
                topped.append(0)
            primary = src < BACKGROUND_ID_BASE
            realized += np.bincount(
                (src[primary] - SOURCE_ID_BASE).astype(np.int64), minlength=scenario.n_sources
            )
            src = src[rng.permutation(scenario.n_valid)]
            dst = (DEST_ID_BASE - 1 + dest_sampler.sample(rng, scenario.n_valid)).astype(
                np.uint64
            )
            sink.write(_window_timestamps(w, scenario.n_valid), src, dst)
    finally:
        sink.close()
    sidecar = _sidecar_path(path)
    truth = {
        "scenario": asdict(scenario),
        "format": fmt,
        "id_bases": {
            "source": SOURCE_ID_BASE,
            "background": BACKGROUND_ID_BASE,
            "observer_b_fill": OBSERVER_B_FILL_BASE,
            "destination": DEST_ID_BASE,
        },
        "window_span_us": WINDOW_SPAN_US,
        "natural": natural,
        "trimmed": trimmed,
        "topped": topped,
    }
    sidecar.write_text(json.dumps(truth, sort_keys=True, indent=2) + "\n")
    return StreamGroundTruth(
        path=path,
        sidecar_path=sidecar,
        fmt=fmt,
        scenario=scenario,
        natural=natural,
        trimmed=trimmed,
        topped=topped,
        realized_source_packets=realized,
        presence=presence,
    )


def generate_two_observers(
    scenario: SyntheticScenario,
    path_a: str | Path,
    path_b: str | Path,
    *,
    fmt: str = "csv",
) -> TwoObserverTruth:
    """Write an observer pair: a full capture A and a sparse echo B.

    A source that sent d packets in total across A's windows appears in
    B with probability min(1, log2(d)/log2(sqrt(n_valid))), as a single
    packet in one uniformly chosen window.  B windows are padded with
    fill sources from a range disjoint from every A range, to a uniform
    per-window count recorded as n_valid_b in the sidecar.
    """
    path_b = Path(path_b)
    stream = generate_stream(scenario, path_a, fmt=fmt)
    rng = np.random.default_rng(scenario.seed + (1 << 32))
    d = stream.realized_source_packets
    eligible = d >= 1
    prob = np.zeros(scenario.n_sources)
    denom = math.log2(math.sqrt(scenario.n_valid))
    with np.errstate(divide="ignore"):
        prob[eligible] = np.minimum(1.0, np.log2(d[eligible]) / denom)
    visible = eligible & (rng.random(scenario.n_sources) < prob)
    vis_idx = np.flatnonzero(visible)
    b_windows = rng.integers(0, scenario.n_windows, size=len(vis_idx), dtype=np.int64)
    per_window = np.bincount(b_windows, minlength=scenario.n_windows)
    peak = int(per_window.max()) if len(per_window) else 0
    n_valid_b = peak + max(8, peak // 4)
    dest_sampler = ZipfMandelbrotSampler(
        scenario.dest_delta, scenario.dest_lambda, scenario.n_destinations
    )
    sink = _StreamSink(path_b, fmt)
    try:
        for w in range(scenario.n_windows):
            members = vis_idx[b_windows == w]
            src = (SOURCE_ID_BASE + members).astype(np.uint64)
            deficit = n_valid_b - len(src)
            fill = OBSERVER_B_FILL_BASE + rng.integers(
                0, max(scenario.background_pool, 1 << 16), size=deficit, dtype=np.int64
            )
            src = np.concatenate([src, fill.astype(np.uint64)])
            src = src[rng.permutation(n_valid_b)]
            dst = (DEST_ID_BASE - 1 + dest_sampler.sample(rng, n_valid_b)).astype(np.uint64)
            sink.write(_window_timestamps(w, n_valid_b), src, dst)
    finally:
        sink.close()
    sidecar = _sidecar_path(path_b)
    truth = {
        "scenario": asdict(scenario),
        "format": fmt,
        "role": "observer_b",
        "n_valid_b": n_valid_b,
        "visible_sources": int(visible.sum()),
        "eligible_sources": int(eligible.sum()),
        "fill_base": OBSERVER_B_FILL_BASE,
    }
    sidecar.write_text(json.dumps(truth, sort_keys=True, indent=2) + "\n")
    return TwoObserverTruth(
        stream=stream,
        path_b=path_b,
        sidecar_b_path=sidecar,
        n_valid_b=n_valid_b,
        visible=visible,
        visible_count=int(visible.sum()),
    )
