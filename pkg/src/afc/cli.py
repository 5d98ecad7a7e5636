"""Experiment front door.

Subcommands:
    run       execute an experiment config, write trace/summary/report files
    verify    run a named property suite with fresh (or pinned) seeds
    spectrum  per-harmonic before/after amplitude table from a trace CSV
    sweep     fan a config out over several seeds and merge the summaries

Exit codes: 0 success, 1 usage/config error, 2 numeric fault,
3 property failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import secrets
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import verify as verify_mod
from .config import load_config
from .errors import AfcError, NumericFault, ValidationError, WindowError
from .lti import TransferFunction, transfer_response
from .simulator import harmonic_amplitude, run_experiment
from .synthesis import feedforward_period

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_PROPERTY = 3


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="afc",
        description="Adaptive feedforward cancellation experiments",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one experiment")
    run_p.add_argument("--config", required=True, help="TOML experiment config")
    run_p.add_argument("--seed", type=int, default=None, help="override run.seed")
    run_p.add_argument("--out", default="out", help="output directory")
    run_p.add_argument(
        "--decimate", type=int, default=None, help="override trace decimation"
    )
    run_p.add_argument(
        "--freeze-at", type=int, default=None, help="override the freeze step"
    )

    ver_p = sub.add_parser("verify", help="run a property suite")
    ver_p.add_argument(
        "suite",
        choices=sorted(verify_mod.SUITES),
        help="property suite to run",
    )
    ver_p.add_argument(
        "--seed", type=int, default=None, help="seed (default: fresh random)"
    )

    sp_p = sub.add_parser("spectrum", help="before/after harmonic amplitudes")
    sp_p.add_argument("--config", required=True)
    sp_p.add_argument("--trace", required=True, help="trace CSV (undecimated)")
    sp_p.add_argument("--out", required=True, help="output spectrum CSV")
    sp_p.add_argument(
        "--window", type=int, default=None, help="window length in samples"
    )
    sp_p.add_argument(
        "--before-start", type=int, default=None, help="start of the before window"
    )
    sp_p.add_argument(
        "--after-start", type=int, default=None, help="start of the after window"
    )

    sw_p = sub.add_parser("sweep", help="run one config across several seeds")
    sw_p.add_argument("--config", required=True)
    sw_p.add_argument(
        "--seeds", required=True, help="comma list (1,2,3) or range (0:8)"
    )
    sw_p.add_argument("--out", default="sweep_out")
    sw_p.add_argument("--workers", type=int, default=None)
    return ap


# ---------------------------------------------------------------------------
# report writers
# ---------------------------------------------------------------------------


def write_summary(summary: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")


def write_spectrum_csv(harmonics_hz, before, after, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["freq_hz", "before_amp", "after_amp", "attenuation_db"])
        for f_hz, b, a in zip(harmonics_hz, before, after):
            att = 20.0 * math.log10(max(a, 1e-300) / max(b, 1e-300))
            w.writerow([repr(float(f_hz)), repr(float(b)), repr(float(a)), repr(att)])


def write_freqresp_csv(cfg, summary: dict, path: str, points: int = 240) -> None:
    """Identified-vs-true frequency response over a grid spanning the band."""
    dist = cfg.make_disturbance()
    tf_true = TransferFunction(A=summary["plant_a"], B=summary["plant_b"])
    a_est = np.concatenate(([1.0], -np.asarray(summary["theta_A_final"])))
    b_est = np.concatenate(([0.0], np.asarray(summary["theta_B_final"])))
    tf_est = TransferFunction(A=a_est, B=b_est)
    f_lo = dist.omegas[0] / (2 * math.pi) / 4.0
    f_hi = 0.45 / dist.T
    grid = np.geomspace(f_lo, f_hi, points)
    harmonics = dist.omegas / (2 * math.pi)
    grid = np.unique(np.concatenate((grid, harmonics)))
    band = (harmonics[0], harmonics[-1])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["freq_hz", "mag_true", "phase_true", "mag_est", "phase_est", "in_band"]
        )
        for f_hz in grid:
            omega = 2 * math.pi * f_hz
            rt = transfer_response(tf_true, omega, dist.T)
            re = transfer_response(tf_est, omega, dist.T)
            w.writerow(
                [
                    repr(float(f_hz)),
                    repr(rt.magnitude),
                    repr(rt.phase),
                    repr(re.magnitude),
                    repr(re.phase),
                    int(band[0] <= f_hz <= band[1]),
                ]
            )


def write_feedforward_csv(cfg, summary: dict, path: str) -> None:
    dist = cfg.make_disturbance()
    u_a = feedforward_period(np.asarray(summary["theta_D_final"]), dist)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "u_A"])
        for k, v in enumerate(u_a):
            w.writerow([k, repr(float(v))])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.decimate is not None:
        cfg.run.decimate = args.decimate
    if args.freeze_at is not None:
        cfg.run.freeze_at = None if args.freeze_at < 0 else args.freeze_at
    violations = cfg.validate()
    if violations:
        raise ValidationError(violations)

    os.makedirs(args.out, exist_ok=True)
    trace = run_experiment(cfg)
    trace.to_csv(os.path.join(args.out, "trace.csv"))
    write_summary(trace.summary, os.path.join(args.out, "summary.json"))
    s = trace.summary
    if s["before_amplitudes"] is not None:
        write_spectrum_csv(
            s["harmonics_hz"],
            s["before_amplitudes"],
            s["after_amplitudes"],
            os.path.join(args.out, "spectrum.csv"),
        )
    write_freqresp_csv(cfg, s, os.path.join(args.out, "freqresp.csv"))
    dist = cfg.make_disturbance()
    if dist.fundamental_period_samples() is not None:
        write_feedforward_csv(cfg, s, os.path.join(args.out, "uA_period.csv"))
    att = s["attenuation_db"]
    print(
        f"run complete: {s['steps']} steps in {s['runtime_s']:.1f}s, "
        f"plant error {s['theta_plant_rel_error']:.3g}, "
        f"attenuation {['%.1f' % a for a in att] if att else 'n/a'} dB"
    )
    return EXIT_OK


def cmd_verify(args) -> int:
    seed = args.seed if args.seed is not None else secrets.randbelow(2**31)
    results = verify_mod.run_suite(args.suite, seed)
    failed = [name for name, ok, _ in results if not ok]
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {args.suite}: {name} -- {detail}")
    print(f"suite {args.suite!r} seed {seed}: {len(results) - len(failed)}/{len(results)} passed")
    return EXIT_OK if not failed else EXIT_PROPERTY


def _read_trace_column(path: str, column: str):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or column not in header or "k" not in header:
            raise ValidationError(
                [f"trace file {path} is missing required column(s) 'k'/{column!r}"]
            )
        k_idx, c_idx = header.index("k"), header.index(column)
        ks, vals = [], []
        for row in reader:
            ks.append(int(row[k_idx]))
            vals.append(float(row[c_idx]))
    return np.asarray(ks), np.asarray(vals)


def cmd_spectrum(args) -> int:
    cfg = load_config(args.config)
    dist = cfg.make_disturbance()
    period = dist.fundamental_period_samples()
    if period is None:
        raise ValidationError(
            ["spectrum analysis needs commensurate harmonics"]
        )
    window = args.window if args.window is not None else cfg.run.spectrum_window
    if window <= 0 or window % period:
        raise WindowError(
            f"window must be a positive multiple of the fundamental period "
            f"({period} samples)"
        )
    ks, e = _read_trace_column(args.trace, "e")
    if e.size == 0:
        raise ValidationError(["trace is empty"])
    before_start = args.before_start if args.before_start is not None else cfg.run.settle
    after_start = args.after_start if args.after_start is not None else e.size - window

    def _window(start):
        stop = start + window
        if start < 0 or stop > e.size:
            raise WindowError(
                f"window [{start}, {stop}) lies outside the trace (0, {e.size})"
            )
        seg_k = ks[start:stop]
        if seg_k[0] != ks[0] + start or seg_k[-1] - seg_k[0] != window - 1:
            raise ValidationError(
                ["trace is decimated inside the analysis window; rerun with "
                 "--decimate 1 or choose aligned windows"]
            )
        return e[start:stop]

    before_seg = _window(before_start)
    after_seg = _window(after_start)
    before = [
        harmonic_amplitude(before_seg, float(w), dist.T).amplitude
        for w in dist.omegas
    ]
    after = [
        harmonic_amplitude(after_seg, float(w), dist.T).amplitude
        for w in dist.omegas
    ]
    write_spectrum_csv(
        [w / (2 * math.pi) for w in dist.omegas], before, after, args.out
    )
    print(f"spectrum written to {args.out}")
    return EXIT_OK


def _parse_seeds(spec: str):
    if ":" in spec:
        lo, hi = spec.split(":", 1)
        return list(range(int(lo), int(hi)))
    return [int(s) for s in spec.split(",") if s.strip()]


def _sweep_worker(config_path: str, seed: int, out_dir: str) -> dict:
    cfg = load_config(config_path)
    cfg.run.seed = seed
    os.makedirs(out_dir, exist_ok=True)
    trace = run_experiment(cfg)
    trace.to_csv(os.path.join(out_dir, "trace.csv"))
    write_summary(trace.summary, os.path.join(out_dir, "summary.json"))
    return trace.summary


def cmd_sweep(args) -> int:
    seeds = _parse_seeds(args.seeds)
    if not seeds:
        raise ValidationError(["no seeds given"])
    load_config(args.config)  # fail fast on config errors before forking
    os.makedirs(args.out, exist_ok=True)
    workers = args.workers or min(4, os.cpu_count() or 1)
    merged = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = {
            seed: pool.submit(
                _sweep_worker,
                args.config,
                seed,
                os.path.join(args.out, f"seed_{seed}"),
            )
            for seed in seeds
        }
        for seed in seeds:
            summary = futures[seed].result()
            merged.append(
                {
                    "seed": seed,
                    "theta_plant_rel_error": summary["theta_plant_rel_error"],
                    "theta_M_residue_ratio": summary["theta_M_residue_ratio"],
                    "attenuation_db": summary["attenuation_db"],
                    "proj_A_count": summary["proj_A_count"],
                    "proj_B_count": summary["proj_B_count"],
                }
            )
    with open(os.path.join(args.out, "sweep_summary.json"), "w") as fh:
        json.dump(merged, fh, indent=2)
        fh.write("\n")
    print(f"sweep of {len(seeds)} seeds written to {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse uses code 2; usage errors are 1 here
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "verify":
            return cmd_verify(args)
        if args.command == "spectrum":
            return cmd_spectrum(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        raise AssertionError(f"unhandled command {args.command}")
    except NumericFault as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, WindowError) as exc:
        if isinstance(exc, ValidationError):
            print("configuration rejected:", file=sys.stderr)
            for v in exc.violations:
                print(f"  - {v}", file=sys.stderr)
        else:
            print(f"window error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AfcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
