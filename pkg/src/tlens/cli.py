"""Command line entry points.

Subcommands cover the full pipeline: ``generate`` a synthetic capture,
``analyze`` a capture into aggregates and degree histograms, ``fit`` the
site model, ``selfcorr``/``crosscorr`` for the correlation curves, and
``predict`` observability from a fitted model.

Exit codes: 0 success, 2 usage or bad parameter values, 3 unreadable or
malformed data, 4 a law could not be fit.

Anonymization keys are never accepted on the command line; pass
``--key-env NAME`` or ``--key-file PATH`` so keys stay out of shell
history and process listings.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from tlens import __version__
from tlens.generator import (
    ScenarioError,
    SyntheticScenario,
    generate_stream,
    generate_two_observers,
)
from tlens.ingest import PacketFilter, ParseError, WindowSpec, scan_windows
from tlens.matrix import (
    AGGREGATE_FIELDS,
    DEGREE_QUANTITIES,
    TrafficMatrix,
    aggregates,
    anonymize,
    build_matrix,
    degree_values,
)
from tlens.model import (
    ModelParameters,
    ObservabilityQuery,
    SiteModelConfig,
    fit_site_model,
    observability_score,
    second_observer_probability,
)
from tlens.permute import KEY_BYTES, KeyedPermutation
from tlens.stats import (
    FitError,
    cross_correlation,
    fit_modified_cauchy,
    histogram,
    self_correlation,
    write_curve_tsv,
    write_histogram_tsv,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_FIT = 4


def _parse_interval(text: str) -> tuple[int, int]:
    lo, sep, hi = text.partition("-")
    if not sep:
        raise ValueError(f"expected LO-HI, got {text!r}")
    return int(lo), int(hi)


def _build_filter(specs: list[str] | None) -> PacketFilter | None:
    if not specs:
        return None
    src: list[tuple[int, int]] = []
    dst: list[tuple[int, int]] = []
    time_range = None
    for spec in specs:
        key, sep, value = spec.partition("=")
        if not sep:
            raise ValueError(f"expected KEY=LO-HI, got {spec!r}")
        interval = _parse_interval(value)
        if key == "src":
            src.append(interval)
        elif key == "dst":
            dst.append(interval)
        elif key == "time":
            if time_range is not None:
                raise ValueError("only one time=LO-HI filter is allowed")
            time_range = interval
        else:
            raise ValueError(f"unknown filter key {key!r} (expected src, dst or time)")
    return PacketFilter(src_ranges=tuple(src), dst_ranges=tuple(dst), time_range=time_range)


def _load_key(args) -> bytes | None:
    if not getattr(args, "anonymize", False):
        return None
    env = getattr(args, "key_env", None)
    key_file = getattr(args, "key_file", None)
    if bool(env) == bool(key_file):
        raise ValueError("--anonymize needs exactly one of --key-env or --key-file")
    if env:
        material = os.environ.get(env)
        if material is None:
            raise ValueError(f"environment variable {env} is not set")
        key = bytes.fromhex(material.strip())
    else:
        blob = Path(key_file).read_bytes()
        key = blob if len(blob) == KEY_BYTES else bytes.fromhex(blob.decode().strip())
    if len(key) != KEY_BYTES:
        raise ValueError(f"key must be {KEY_BYTES} bytes, got {len(key)}")
    return key


def _add_reader_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", required=True, help="capture file (.gz ok)")
    parser.add_argument("--nv", required=True, type=int, help="packets per window")
    parser.add_argument(
        "--format", default="auto", choices=("auto", "csv", "binary"), help="input format"
    )
    parser.add_argument(
        "--filter",
        action="append",
        metavar="KEY=LO-HI",
        help="validity filter (src, dst or time); repeatable",
    )
    parser.add_argument(
        "--time-tolerance", type=int, default=0, help="allowed backward jitter in microseconds"
    )
    parser.add_argument("--anonymize", action="store_true", help="relabel ids through a keyed permutation")
    parser.add_argument("--key-env", metavar="NAME", help="hex key from this environment variable")
    parser.add_argument("--key-file", metavar="PATH", help="key file (raw 32 bytes or hex)")


def _read_matrices(args) -> tuple[list[TrafficMatrix], "object"]:
    key = _load_key(args)
    scan = scan_windows(
        args.input,
        WindowSpec(args.nv),
        packet_filter=_build_filter(args.filter),
        fmt=args.format,
        time_tolerance=args.time_tolerance,
    )
    perm = KeyedPermutation(key) if key is not None else None
    matrices = []
    for window in scan:
        m = build_matrix(window)
        if perm is not None:
            m = anonymize(m, perm)
        matrices.append(m)
    return matrices, scan


def _out_dir(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def cmd_analyze(args) -> int:
    matrices, scan = _read_matrices(args)
    if not matrices:
        print("tlens analyze: no complete window in input", file=sys.stderr)
        return EXIT_DATA
    out = _out_dir(args)
    lines = ["window\t" + "\t".join(AGGREGATE_FIELDS)]
    for m in matrices:
        agg = aggregates(m).as_dict()
        lines.append("\t".join([str(m.window_index)] + [str(agg[f]) for f in AGGREGATE_FIELDS]))
    (out / "aggregates.tsv").write_text("\n".join(lines) + "\n")
    for quantity in DEGREE_QUANTITIES:
        pooled = np.concatenate([degree_values(m, quantity) for m in matrices])
        write_histogram_tsv(out / f"hist_{quantity}.tsv", histogram(pooled))
    _dump_json(
        out / "summary.json",
        {
            "windows": len(matrices),
            "n_valid": args.nv,
            "dropped": scan.dropped,
            "filtered_out": scan.filtered_out,
            "anonymized": bool(getattr(args, "anonymize", False)),
        },
    )
    print(str(out / "aggregates.tsv"))
    return EXIT_OK


def cmd_fit(args) -> int:
    matrices, _ = _read_matrices(args)
    config = SiteModelConfig(
        scaling_quantity=args.scaling_quantity,
        zm_quantity=args.zm_quantity,
        max_lag=args.max_lag,
        site_label=args.site_label,
    )
    params = fit_site_model(matrices, config)
    out = _out_dir(args)
    _dump_json(out / "model.json", params.to_json_dict())
    print(str(out / "model.json"))
    return EXIT_OK


def cmd_selfcorr(args) -> int:
    matrices, _ = _read_matrices(args)
    if len(matrices) < 2:
        print("tlens selfcorr: need at least 2 complete windows", file=sys.stderr)
        return EXIT_DATA
    max_lag = args.max_lag or max(1, len(matrices) // 2)
    curve = self_correlation([m.row_ids() for m in matrices], max_lag)
    out = _out_dir(args)
    write_curve_tsv(out / "selfcorr.tsv", curve)
    fit = fit_modified_cauchy(curve)
    _dump_json(out / "cauchy.json", fit.to_json_dict())
    print(str(out / "selfcorr.tsv"))
    return EXIT_OK


def _observer_windows(path, nv, fmt, tolerance, source_range):
    packets: dict[int, dict[int, int]] = {}
    sets: dict[int, set[int]] = {}
    scan = scan_windows(path, WindowSpec(nv), fmt=fmt, time_tolerance=tolerance)
    for window in scan:
        m = build_matrix(window)
        ids = [int(v) for v in m.row_ids().tolist()]
        counts = m.row_packet_counts().tolist()
        if source_range is not None:
            lo, hi = source_range
            pairs = [(i, c) for i, c in zip(ids, counts) if lo <= i <= hi]
        else:
            pairs = list(zip(ids, counts))
        packets[window.index] = dict(pairs)
        sets[window.index] = {i for i, _ in pairs}
    return packets, sets


def cmd_crosscorr(args) -> int:
    source_range = _parse_interval(args.source_range) if args.source_range else None
    a_packets, _ = _observer_windows(
        args.input_a, args.nv_a, args.format, args.time_tolerance, source_range
    )
    _, b_sets = _observer_windows(
        args.input_b, args.nv_b, args.format, args.time_tolerance, source_range
    )
    curve = cross_correlation(a_packets, b_sets)
    model = [
        second_observer_probability(1 << int(p.x) if p.x >= 0 else 1, args.nv_a)
        for p in curve.points
    ]
    out = _out_dir(args)
    write_curve_tsv(out / "crosscorr.tsv", curve, model=model)
    print(str(out / "crosscorr.tsv"))
    return EXIT_OK


def cmd_predict(args) -> int:
    params = ModelParameters.from_json_dict(json.loads(Path(args.model).read_text()))
    query = ObservabilityQuery(n_valid=args.nv, d=args.d, t=args.t)
    score = observability_score(params, query)
    payload = {
        "raw": score.raw,
        "probability": score.probability,
        "factors": dict(score.factors),
        "degenerate_d": score.degenerate_d,
        "t_half": params.t_half,
        "query": {"n_valid": args.nv, "d": args.d, "t": args.t},
    }
    print(json.dumps(payload, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_generate(args) -> int:
    scenario = SyntheticScenario(
        n_sources=args.sources,
        n_windows=args.windows,
        n_valid=args.nv,
        seed=args.seed,
        zm_delta=args.zm_delta,
        zm_lambda=args.zm_lambda,
        intensity_max=args.intensity_max,
        cauchy_alpha=args.cauchy_alpha,
        cauchy_beta=args.cauchy_beta,
        n_destinations=args.destinations,
        dest_delta=args.dest_delta,
        dest_lambda=args.dest_lambda,
        background_pool=args.background_pool,
    )
    if args.output_b:
        truth = generate_two_observers(scenario, args.output, args.output_b, fmt=args.format)
        print(str(truth.stream.sidecar_path))
        print(str(truth.sidecar_b_path))
    else:
        truth = generate_stream(scenario, args.output, fmt=args.format)
        print(str(truth.sidecar_path))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tlens",
        description="Windowed traffic-matrix analytics and observability modeling.",
    )
    parser.add_argument("--version", action="version", version=f"tlens {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="aggregate and histogram a capture")
    _add_reader_args(p)
    p.add_argument("--output-dir", default=".", help="directory for result files")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("fit", help="fit the three-law site model")
    _add_reader_args(p)
    p.add_argument("--output-dir", default=".", help="directory for model.json")
    p.add_argument(
        "--scaling-quantity", default="unique_sources", choices=AGGREGATE_FIELDS
    )
    p.add_argument("--zm-quantity", default="source_fanout", choices=DEGREE_QUANTITIES)
    p.add_argument("--max-lag", type=int, default=None)
    p.add_argument("--site-label", default="")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("selfcorr", help="source-set self-correlation curve and fit")
    _add_reader_args(p)
    p.add_argument("--output-dir", default=".", help="directory for result files")
    p.add_argument("--max-lag", type=int, default=None)
    p.set_defaults(func=cmd_selfcorr)

    p = sub.add_parser("crosscorr", help="two-observer correlation by traffic size")
    p.add_argument("--input-a", required=True, help="observer A capture")
    p.add_argument("--input-b", required=True, help="observer B capture")
    p.add_argument("--nv-a", required=True, type=int, help="observer A packets per window")
    p.add_argument("--nv-b", required=True, type=int, help="observer B packets per window")
    p.add_argument(
        "--format", default="auto", choices=("auto", "csv", "binary"), help="input format"
    )
    p.add_argument("--time-tolerance", type=int, default=0)
    p.add_argument(
        "--source-range",
        metavar="LO-HI",
        help="restrict measured sources to this id range",
    )
    p.add_argument("--output-dir", default=".", help="directory for crosscorr.tsv")
    p.set_defaults(func=cmd_crosscorr)

    p = sub.add_parser("predict", help="score observability from a fitted model")
    p.add_argument("--model", required=True, help="model.json from tlens fit")
    p.add_argument("--nv", required=True, type=int, help="window size of the what-if")
    p.add_argument("-d", "--d", required=True, type=int, help="source traffic in packets")
    p.add_argument("-t", "--t", required=True, type=float, help="lag in windows")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("generate", help="write a synthetic capture with ground truth")
    p.add_argument("--output", required=True, help="capture path (.gz compresses CSV)")
    p.add_argument("--output-b", help="also write a second-observer capture here")
    p.add_argument("--format", default="csv", choices=("csv", "binary"))
    p.add_argument("--sources", required=True, type=int)
    p.add_argument("--windows", required=True, type=int)
    p.add_argument("--nv", required=True, type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--zm-delta", type=float, default=1.0)
    p.add_argument("--zm-lambda", type=float, default=2.0)
    p.add_argument("--intensity-max", type=int, default=10_000)
    p.add_argument("--cauchy-alpha", type=float, default=0.8)
    p.add_argument("--cauchy-beta", type=float, default=10.0)
    p.add_argument("--destinations", type=int, default=1 << 16)
    p.add_argument("--dest-delta", type=float, default=0.0)
    p.add_argument("--dest-lambda", type=float, default=1.2)
    p.add_argument("--background-pool", type=int, default=1 << 16)
    p.set_defaults(func=cmd_generate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FitError as exc:
        print(f"tlens: fit error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except ParseError as exc:
        print(f"tlens: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ScenarioError as exc:
        print(f"tlens: scenario error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"tlens: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"tlens: invalid parameters: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
