"""Site model: fitted law parameters and source-observability scoring.

A site is summarized by five numbers: gamma (window scaling), delta and
lambda (Zipf-Mandelbrot degree frequency), alpha and beta (modified
Cauchy revisit decay).  Their product prices how observable a source of
a given traffic size is at a given lag; normalizing against the
saturating reference source (d = sqrt(n_valid), t = 0) turns the score
into a capped probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from tlens.matrix import (
    AGGREGATE_FIELDS,
    DEGREE_QUANTITIES,
    TrafficMatrix,
    aggregates,
    degree_values,
    merge_matrices,
)
from tlens.stats import (
    CauchyFit,
    FitError,
    ScalingFit,
    fit_modified_cauchy,
    fit_window_scaling,
    fit_zipf_mandelbrot,
    histogram,
    self_correlation,
)

MODEL_PARAMETER_NAMES = ("gamma", "delta", "lambda", "alpha", "beta")


@dataclass(frozen=True)
class ModelParameters:
    """The five fitted parameters of one site, plus fit provenance."""

    gamma: float
    delta: float
    lambda_: float
    alpha: float
    beta: float
    site_label: str = ""
    provenance: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.delta <= -1.0:
            raise ValueError(f"delta must be > -1, got {self.delta}")
        if self.lambda_ <= 0.0:
            raise ValueError(f"lambda must be > 0, got {self.lambda_}")
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must be in (0, 2], got {self.alpha}")
        if self.beta <= 0.0:
            raise ValueError(f"beta must be > 0, got {self.beta}")

    @property
    def t_half(self) -> float:
        """Lag where the revisit probability crosses one half."""
        return self.beta ** (1.0 / self.alpha)

    def to_json_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "delta": self.delta,
            "lambda": self.lambda_,
            "alpha": self.alpha,
            "beta": self.beta,
            "t_half": self.t_half,
            "site_label": self.site_label,
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "ModelParameters":
        return cls(
            gamma=float(data["gamma"]),
            delta=float(data["delta"]),
            lambda_=float(data["lambda"]),
            alpha=float(data["alpha"]),
            beta=float(data["beta"]),
            site_label=str(data.get("site_label", "")),
            provenance=dict(data.get("provenance", {})),
        )


@dataclass(frozen=True)
class ObservabilityQuery:
    """A what-if question: window size n_valid, source traffic d, lag t."""

    n_valid: int
    d: int
    t: float

    def __post_init__(self):
        if self.n_valid < 2:
            raise ValueError(f"n_valid must be >= 2, got {self.n_valid}")
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if self.t < 0:
            raise ValueError(f"t must be >= 0, got {self.t}")


@dataclass(frozen=True)
class ObservabilityScore:
    """Raw product score, its capped probability, and the four factors.

    ``degenerate_d`` marks d = 1, where log2(d) = 0 pins the visibility
    factor (and hence the whole score) to zero.
    """

    raw: float
    probability: float
    factors: Mapping[str, float]
    degenerate_d: bool


def second_observer_probability(d: int, n_valid: int) -> float:
    """Chance a source sending d packets is seen at a second vantage point.

    log2(d) / log2(sqrt(n_valid)), capped at 1: a source crossing the
    sqrt(n_valid) traffic line is always observable, one packet never is.
    """
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if n_valid < 2:
        raise ValueError(f"n_valid must be >= 2, got {n_valid}")
    return min(1.0, math.log2(d) / math.log2(math.sqrt(n_valid)))


def revisit_probability(fit: CauchyFit | ModelParameters, t: float) -> float:
    """Modified Cauchy decay beta/(beta + t**alpha); equals 1 at t = 0."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    return fit.beta / (fit.beta + t**fit.alpha)


def expected_quantity(fit: ScalingFit, n_valid: int) -> float:
    """Predicted aggregate value at a window size: coefficient * n_valid**gamma."""
    if n_valid < 1:
        raise ValueError(f"n_valid must be >= 1, got {n_valid}")
    return fit.coefficient * n_valid**fit.gamma


def observability_score(params: ModelParameters, query: ObservabilityQuery) -> ObservabilityScore:
    """Score how observable a source is; the four factors multiply.

    raw = n_valid**gamma * (d+delta)**-lambda * beta/(beta+t**alpha)
          * min(1, log2(d)/log2(sqrt(n_valid)))

    The capped probability divides by the raw score of the reference
    source (d = sqrt(n_valid), t = 0) and clips at 1, so it preserves
    the raw ordering up to saturation ties.
    """
    base = query.d + params.delta
    if base <= 0.0:
        raise ValueError(f"d + delta = {base} is outside the degree-law domain")
    window_factor = float(query.n_valid) ** params.gamma
    degree_factor = base ** (-params.lambda_)
    revisit_factor = revisit_probability(params, query.t)
    visibility_factor = second_observer_probability(query.d, query.n_valid)
    raw = window_factor * degree_factor * revisit_factor * visibility_factor
    ref_degree = (math.sqrt(query.n_valid) + params.delta) ** (-params.lambda_)
    reference = window_factor * ref_degree
    probability = min(1.0, raw / reference)
    return ObservabilityScore(
        raw=raw,
        probability=probability,
        factors={
            "window_scaling": window_factor,
            "degree": degree_factor,
            "revisit": revisit_factor,
            "visibility": visibility_factor,
        },
        degenerate_d=query.d == 1,
    )


@dataclass(frozen=True)
class SiteModelConfig:
    """Which measurements feed which law, and the self-correlation depth."""

    scaling_quantity: str = "unique_sources"
    zm_quantity: str = "source_fanout"
    max_lag: int | None = None
    site_label: str = ""

    def __post_init__(self):
        if self.scaling_quantity not in AGGREGATE_FIELDS:
            raise ValueError(f"unknown aggregate {self.scaling_quantity!r}")
        if self.zm_quantity not in DEGREE_QUANTITIES:
            raise ValueError(f"unknown degree quantity {self.zm_quantity!r}")
        if self.max_lag is not None and self.max_lag < 1:
            raise ValueError(f"max_lag must be >= 1, got {self.max_lag}")


def _scaling_samples(
    matrices: Sequence[TrafficMatrix], quantity: str, base_n_valid: int
) -> list[tuple[int, float]]:
    """Dyadic merge ladder: mean aggregate per block size 1, 2, 4, ... windows."""
    if len(matrices) < 4:
        raise FitError(
            f"window-scaling fit needs >= 4 windows for a 4x size span, got {len(matrices)}"
        )
    samples: list[tuple[int, float]] = []
    level = list(matrices)
    scale = 1
    while True:
        values = [getattr(aggregates(m), quantity) for m in level]
        samples.append((base_n_valid * scale, float(np.mean(values))))
        if len(level) < 2:
            break
        level = [merge_matrices(level[i : i + 2]) for i in range(0, len(level) - 1, 2)]
        scale *= 2
    return samples


def fit_site_model(
    matrices: Sequence[TrafficMatrix], config: SiteModelConfig | None = None
) -> ModelParameters:
    """Fit all three laws over a uniform window series and bundle the model.

    The scaling law is fit over a dyadic ladder of merged window blocks,
    the degree law over the pooled per-window degree values, the revisit
    law over the per-window source-set self-correlation.  Failures raise
    FitError naming the law that could not be fit.
    """
    if config is None:
        config = SiteModelConfig()
    matrices = list(matrices)
    if not matrices:
        raise FitError("window-scaling fit needs >= 4 windows, got 0")
    base = matrices[0].n_valid
    for m in matrices:
        if m.n_valid != base:
            raise ValueError(
                f"mixed window sizes: {m.n_valid} != {base}; fit one series at a time"
            )

    samples = _scaling_samples(matrices, config.scaling_quantity, base)
    scaling = fit_window_scaling(samples)

    pooled = np.concatenate([degree_values(m, config.zm_quantity) for m in matrices])
    degree_hist = histogram(pooled)
    zm = fit_zipf_mandelbrot(degree_hist)

    max_lag = config.max_lag
    if max_lag is None:
        max_lag = max(1, min(len(matrices) - 1, len(matrices) // 2))
    try:
        curve = self_correlation([m.row_ids() for m in matrices], max_lag)
        cauchy = fit_modified_cauchy(curve)
    except FitError:
        raise
    except ValueError as exc:
        raise FitError(f"modified-cauchy fit: {exc}") from exc

    provenance = {
        "n_windows": len(matrices),
        "base_n_valid": base,
        "scaling": {
            **scaling.to_json_dict(),
            "quantity": config.scaling_quantity,
            "samples": [[n, v] for n, v in samples],
        },
        "zipf_mandelbrot": {
            **zm.to_json_dict(),
            "quantity": config.zm_quantity,
            "distinct_degrees": len(degree_hist.bins),
            "values": degree_hist.total,
        },
        "cauchy": {
            **cauchy.to_json_dict(),
            "max_lag": max_lag,
            "skipped_windows": list(curve.skipped),
        },
    }
    return ModelParameters(
        gamma=scaling.gamma,
        delta=zm.delta,
        lambda_=zm.lambda_,
        alpha=cauchy.alpha,
        beta=cauchy.beta,
        site_label=config.site_label,
        provenance=provenance,
    )
