"""Deterministic command-line front end.

Subcommands: synth, scaling, flops, calib, atr-sim. Configuration comes from
flags and/or a JSON config file (flags win). Output is CSV (6 significant
digits) or JSON (full precision plus run metadata).

Exit codes: 0 success, 1 usage/config error, 2 acceptance-gate failure,
3 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import sys

import numpy as np

from . import __version__
from .atr import (HysteresisConfig, apply_hysteresis, expected_tau, flip_rate,
                  FlopsModel, per_layer_pruned_cost, surrogate_tau, total_flops)
from .calib import CalibrationConfig, r_ece
from .stats import scaling_sweep, WIDTH_BIN_LABELS
from .synth import (NoiseSpec, TimeGrid, make_distance_field,
                    make_kernel_features, sample_noise)

GATE_FAIL = 2
IO_ERROR = 3
USAGE_ERROR = 1


class UsageError(Exception):
    pass


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def _write_csv(path, header, rows):
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    _write_text(path, buf.getvalue())


def _write_json(path, header, rows, meta):
    records = [dict(zip(header, row)) for row in rows]
    payload = {"metadata": meta, "records": records}
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True,
                                 default=float) + "\n")


def _write_text(path, text):
    if path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _metadata(args, effective: dict) -> dict:
    return {"seed": effective.get("seed"),
            "config_hash": _config_hash(effective),
            "tool_version": __version__}


def _emit(args, header, rows, effective):
    if args.format == "json":
        _write_json(args.out, header, rows, _metadata(args, effective))
    else:
        _write_csv(args.out, header, rows)


def _noise_from(args) -> NoiseSpec:
    return NoiseSpec(family=args.noise_family, scale=args.noise_scale,
                     rho=args.rho, nu=args.nu)


def cmd_synth(args) -> int:
    grid = TimeGrid(stride=args.stride, num_positions=args.num_positions)
    boundaries = [float(b) for b in args.boundaries.split(",")]
    if args.series == "distance":
        values = make_distance_field(grid, boundaries)
    elif args.series == "features":
        values = make_kernel_features(grid, boundaries[0], args.kappa)
    else:  # noisy observations of the distance field
        if args.seed is None:
            raise UsageError("--seed is required for noisy generation")
        clean = make_distance_field(grid, boundaries)
        eps = sample_noise(_noise_from(args), grid.num_positions, args.seed)
        values = clean + grid.stride * eps
    t = grid.times()
    rows = [(i, t[i], float(values[i])) for i in range(grid.num_positions)]
    effective = {"seed": args.seed, "series": args.series,
                 "stride": args.stride, "num_positions": args.num_positions,
                 "boundaries": boundaries}
    _emit(args, ("position", "time_frames", "value"), rows, effective)
    return 0


def cmd_scaling(args) -> int:
    if args.seed is None:
        raise UsageError("--seed is required")
    kappas = [float(v) for v in args.kappas.split(",")]
    strides = [float(v) for v in args.strides.split(",")]
    noise = _noise_from(args)
    cells, slope, intercept, r2, bins = scaling_sweep(
        kappas, strides, args.num_positions, noise, args.trials, args.seed)
    header = ("kappa", "stride", "x_dt2_over_kappa", "var_bdr", "var_cls",
              "R", "ci_low", "ci_high", "failures")
    rows = [(c["kappa"], c["stride"], c["x"], c["var_bdr"], c["var_cls"],
             c["R"], c["ci_low"], c["ci_high"], c["failures"]) for c in cells]
    rows.append(("slope", "", "", "", "", slope, "", "", ""))
    rows.append(("intercept", "", "", "", "", intercept, "", "", ""))
    rows.append(("r_squared", "", "", "", "", r2, "", "", ""))
    for label, mean in zip(WIDTH_BIN_LABELS, bins):
        rows.append((f"bin:{label}", "", "", "", "",
                     mean if mean is not None else "", "", "", ""))
    effective = {"seed": args.seed, "kappas": kappas, "strides": strides,
                 "trials": args.trials, "num_positions": args.num_positions,
                 "noise": vars(args)["noise_family"], "scale": args.noise_scale,
                 "rho": args.rho}
    _emit(args, header, rows, effective)
    if args.gate and not (args.band_low <= slope <= args.band_high):
        return GATE_FAIL
    return 0


def cmd_flops(args) -> int:
    points = []
    for part in args.points.split(","):
        tau_s, keep_s = part.split(":")
        points.append((float(tau_s), float(keep_s)))
    header = ("expected_tau", "keep_ratio", "backbone_g", "shallow_g",
              "deep_g", "heads_g", "predictors_g", "per_layer_pruned_g",
              "total_g")
    rows = []
    for tau, keep in points:
        model = FlopsModel(keep_ratio=keep)
        plp = per_layer_pruned_cost(model)
        rows.append((tau, keep, model.backbone_g,
                     model.shallow_layers * plp,
                     tau * model.deep_layers * plp,
                     model.heads_g, model.predictors_g, plp,
                     total_flops(model, tau)))
    effective = {"seed": None, "points": args.points}
    _emit(args, header, rows, effective)
    return 0


def _calib_scenario(name: str, samples: int, seed: int):
    rng = np.random.default_rng(seed)
    sigma = np.exp(rng.uniform(np.log(0.2), np.log(5.0), samples))
    errors = rng.normal(0.0, sigma)
    if name == "well_calibrated":
        return errors, sigma
    if name == "sigma_x2":
        return errors, 2.0 * sigma
    raise UsageError(f"unknown scenario: {name}")


def _read_error_sigma_csv(path):
    errors, sigmas = [], []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise UsageError("empty input file")
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            errors.append(float(parts[0]))
            sigmas.append(float(parts[1]))
        except (IndexError, ValueError):
            raise UsageError(f"malformed CSV at line {ln}: {line!r}")
    if not errors:
        raise UsageError("input file has no data rows")
    return np.array(errors), np.array(sigmas)


def cmd_calib(args) -> int:
    if args.input:
        errors, sigmas = _read_error_sigma_csv(args.input)
    else:
        if args.seed is None:
            raise UsageError("--seed is required for synthetic scenarios")
        errors, sigmas = _calib_scenario(args.scenario, args.samples, args.seed)
    cfg = CalibrationConfig(num_bins=args.bins)
    value, rows = r_ece(errors, sigmas, cfg, return_bins=True)
    header = ("bin", "count", "mean_sigma_sq", "coverage")
    out_rows = [(i, c, ms, cov) for i, (c, ms, cov) in enumerate(rows)]
    out_rows.append(("r_ece", "", "", value))
    effective = {"seed": args.seed, "scenario": args.scenario,
                 "samples": args.samples, "bins": args.bins,
                 "input": args.input}
    _emit(args, header, out_rows, effective)
    return 0


def tau_scenario(length: int, rho: float, gain: float, seed: int) -> np.ndarray:
    """Synthetic depth-allocation trace: logistic of an AR(1) latent.

    rho defaults near cos(0.182*pi) so the raw flip rate of the latent sits
    around the observed 18% level.
    """
    rng = np.random.default_rng(seed)
    eta = rng.normal(0.0, 1.0, length)
    x = np.empty(length)
    x[0] = eta[0]
    c = np.sqrt(1.0 - rho**2)
    for i in range(1, length):
        x[i] = rho * x[i - 1] + c * eta[i]
    return 1.0 / (1.0 + np.exp(-gain * x))


def cmd_atr_sim(args) -> int:
    if args.seed is None:
        raise UsageError("--seed is required")
    tau = tau_scenario(args.length, args.trace_rho, args.gain, args.seed)
    raw_flip = flip_rate(tau)
    header = ("mode", "gamma", "flip_rate_raw", "flip_rate_stabilized",
              "mean_tau_raw", "mean_tau_stabilized")
    rows = []
    for mode in ("hold_previous", "deadzone_half"):
        cfg = HysteresisConfig(gamma=args.gamma, mode=mode)
        stab = apply_hysteresis(tau, cfg)
        rows.append((mode, args.gamma, raw_flip, flip_rate(stab),
                     float(np.mean(tau)), float(np.mean(stab))))
    effective = {"seed": args.seed, "length": args.length,
                 "trace_rho": args.trace_rho, "gain": args.gain,
                 "gamma": args.gamma}
    _emit(args, header, rows, effective)
    return 0


def _add_common(p):
    p.add_argument("--out", default="-", help="output path ('-' = stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None,
                   help="JSON config file; flags override its values")


def _add_noise(p):
    p.add_argument("--noise-family", choices=("laplace", "gaussian", "student_t"),
                   default="laplace")
    p.add_argument("--noise-scale", type=float, default=0.5)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--nu", type=float, default=3.0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bdrlab")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="emit synthetic series")
    _add_common(p)
    _add_noise(p)
    p.add_argument("--series", choices=("distance", "features", "noisy"),
                   default="distance")
    p.add_argument("--num-positions", type=int, default=100)
    p.add_argument("--stride", type=float, default=1.0)
    p.add_argument("--boundaries", default="25")
    p.add_argument("--kappa", type=float, default=2.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("scaling", help="variance-ratio scaling sweep")
    _add_common(p)
    _add_noise(p)
    p.add_argument("--kappas", default="1,2,4,8")
    p.add_argument("--strides", default="1,2,4,8")
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--num-positions", type=int, default=200)
    p.add_argument("--gate", action="store_true",
                   help="exit 2 unless the fitted slope is inside the band")
    p.add_argument("--band-low", type=float, default=0.8)
    p.add_argument("--band-high", type=float, default=1.3)
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("flops", help="itemised analytic cost table")
    _add_common(p)
    p.add_argument("--points", default="0.16:0.8",
                   help="comma list of expected_tau:keep_ratio pairs")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("calib", help="regression calibration report")
    _add_common(p)
    p.add_argument("--scenario", default="well_calibrated")
    p.add_argument("--samples", type=int, default=100000)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--input", default=None,
                   help="CSV of error,sigma instead of a scenario")
    p.set_defaults(func=cmd_calib)

    p = sub.add_parser("atr-sim", help="hysteresis stabilisation report")
    _add_common(p)
    p.add_argument("--length", type=int, default=10000)
    p.add_argument("--trace-rho", type=float, default=0.84)
    p.add_argument("--gain", type=float, default=0.2)
    p.add_argument("--gamma", type=float, default=0.05)
    p.set_defaults(func=cmd_atr_sim)
    return ap


def _apply_config_file(args, argv):
    if not getattr(args, "config", None):
        return args
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    # flags given on the command line override file values
    given = {a.split("=", 1)[0] for a in argv if a.startswith("--")}
    for key, value in cfg.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise UsageError(f"unknown config key: {key}")
        if f"--{key.replace('_', '-')}" not in given:
            setattr(args, attr, value)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # argparse exits 2 on bad flags; remap
            return 0 if exc.code in (0, None) else USAGE_ERROR
        args = _apply_config_file(args, argv if argv is not None else sys.argv[1:])
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return IO_ERROR


if __name__ == "__main__":
    sys.exit(main())
