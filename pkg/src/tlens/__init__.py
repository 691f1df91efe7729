"""Traffic-window analytics for anonymized packet captures.

The package turns a packet stream into fixed-size traffic matrices,
summarizes each window with a small catalog of network aggregates and
degree distributions, fits the heavy-tail laws those summaries follow,
and scores how observable a source is from a second vantage point.
"""

from tlens.ingest import (
    PacketFilter,
    PacketRecord,
    ParseError,
    Window,
    WindowSpec,
    filter_valid,
    parse_records,
    scan_windows,
    window_stream,
)
from tlens.matrix import (
    NetworkAggregates,
    RangeMask,
    TrafficMatrix,
    aggregates,
    anonymize,
    build_matrix,
    degree_vectors,
    load_matrix,
    merge_matrices,
    save_matrix,
    subrange_exclude,
    subrange_include,
)
from tlens.model import (
    ModelParameters,
    ObservabilityQuery,
    ObservabilityScore,
    SiteModelConfig,
    expected_quantity,
    fit_site_model,
    observability_score,
    revisit_probability,
    second_observer_probability,
)
from tlens.permute import KeyedPermutation
from tlens.stats import (
    CauchyFit,
    CorrelationCurve,
    DegreeHistogram,
    FitError,
    ScalingFit,
    ZipfMandelbrotFit,
    cross_correlation,
    fit_modified_cauchy,
    fit_window_scaling,
    fit_zipf_mandelbrot,
    histogram,
    self_correlation,
)
from tlens.generator import (
    ScenarioError,
    SyntheticScenario,
    ZipfMandelbrotSampler,
    generate_stream,
    generate_two_observers,
    renewal_gap_pmf,
    simulate_presence,
)

__version__ = "0.1.0"

__all__ = [
    "CauchyFit",
    "CorrelationCurve",
    "DegreeHistogram",
    "FitError",
    "KeyedPermutation",
    "ModelParameters",
    "NetworkAggregates",
    "ObservabilityQuery",
    "ObservabilityScore",
    "PacketFilter",
    "PacketRecord",
    "ParseError",
    "RangeMask",
    "ScalingFit",
    "ScenarioError",
    "SiteModelConfig",
    "SyntheticScenario",
    "TrafficMatrix",
    "Window",
    "WindowSpec",
    "ZipfMandelbrotFit",
    "ZipfMandelbrotSampler",
    "aggregates",
    "anonymize",
    "build_matrix",
    "cross_correlation",
    "degree_vectors",
    "expected_quantity",
    "filter_valid",
    "fit_modified_cauchy",
    "fit_site_model",
    "fit_window_scaling",
    "fit_zipf_mandelbrot",
    "generate_stream",
    "generate_two_observers",
    "histogram",
    "load_matrix",
    "merge_matrices",
    "observability_score",
    "parse_records",
    "renewal_gap_pmf",
    "revisit_probability",
    "save_matrix",
    "scan_windows",
    "second_observer_probability",
    "self_correlation",
    "simulate_presence",
    "subrange_exclude",
    "subrange_include",
    "window_stream",
    "__version__",
]
