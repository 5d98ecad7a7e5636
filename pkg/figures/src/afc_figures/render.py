"""Render experiment output files into the standard figure set.

Five figure kinds:

    params       evolution of -theta_A and theta_B estimates (trace.csv)
    theta-m      evolution of the residual parameters theta_M (trace.csv)
    freqresp     identified vs true frequency response with the shaded
                 compensation band (freqresp.csv)
    spectrum     before/after error amplitude bars per harmonic (spectrum.csv)
    feedforward  one period of the learned feedforward signal (uA_period.csv)

Output files are byte-deterministic for identical inputs (Agg backend,
fixed style, scrubbed PNG metadata). render() returns a dict of statistics
computed from the plotted data so scripts and tests can check figures
numerically instead of visually.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

KINDS = ("params", "theta-m", "freqresp", "spectrum", "feedforward")

_STYLE = {
    "figure.figsize": (8.0, 4.5),
    "figure.dpi": 120,
    "savefig.dpi": 150,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "lines.linewidth": 1.1,
}


class FigureInputError(Exception):
    """Base error for unusable inputs."""


class SchemaError(FigureInputError):
    """Input file does not match the documented column schema."""


class EmptyInputError(FigureInputError):
    """Input file parses but contains no data rows."""


@dataclass
class PlotJob:
    kind: str
    inputs: dict
    out_path: str
    title: str = ""
    options: dict = field(default_factory=dict)


def read_table(path, required_columns=(), required_prefixes=()):
    """CSV file as {column: float array}; validates the documented schema."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyInputError(f"empty input: {path}")
        rows = list(reader)
    for col in required_columns:
        if col not in header:
            raise SchemaError(f"missing column {col!r} in {path}")
    for prefix in required_prefixes:
        if not any(h.startswith(prefix) for h in header):
            raise SchemaError(f"missing column(s) {prefix}* in {path}")
    if not rows:
        raise EmptyInputError(f"empty input: {path} (header only)")
    data = np.asarray(rows, dtype=float)
    return {name: data[:, i] for i, name in enumerate(header)}


def _columns(table, prefix):
    """Numbered columns with the given prefix, in index order."""
    names = [
        n for n in table if n.startswith(prefix) and n[len(prefix):].isdigit()
    ]
    return sorted(names, key=lambda n: int(n[len(prefix):]))


def _flatness(ks, curves, tail_fraction=0.2):
    """Largest tail-window std/range ratio over the given curves."""
    start = int(len(ks) * (1.0 - tail_fraction))
    worst = 0.0
    for y in curves:
        tail = y[start:]
        spread = float(np.max(np.abs(y)) - np.min(y)) or 1.0
        worst = max(worst, float(np.std(tail)) / max(abs(spread), 1e-30))
    return worst


def _save(fig, job):
    fig.tight_layout()
    fig.savefig(job.out_path, metadata={"Software": None})
    plt.close(fig)


def _render_params(job):
    table = read_table(
        job.inputs["trace"],
        required_columns=("k",),
        required_prefixes=("theta_A_", "theta_B_"),
    )
    ks = table["k"]
    a_cols = _columns(table, "theta_A_")
    b_cols = _columns(table, "theta_B_")
    fig, ax = plt.subplots()
    for name in a_cols:
        ax.plot(ks, -table[name], label=f"-{name}")
    for name in b_cols:
        ax.plot(ks, table[name], "--", label=name)
    ax.set_xlabel("step")
    ax.set_ylabel("estimated coefficients")
    ax.set_title(job.title or "Evolution of the plant-coefficient estimates")
    ax.legend(ncol=2, fontsize=7)
    _save(fig, job)
    curves = [table[n] for n in a_cols + b_cols]
    return {"curves": len(curves), "flatness": _flatness(ks, curves)}


def _render_theta_m(job):
    table = read_table(
        job.inputs["trace"], required_columns=("k",), required_prefixes=("theta_M_",)
    )
    ks = table["k"]
    cols = _columns(table, "theta_M_")
    fig, ax = plt.subplots()
    for name in cols:
        ax.plot(ks, table[name], label=name)
    ax.set_xlabel("step")
    ax.set_ylabel("residual parameters")
    ax.set_title(job.title or "Evolution of the residual parameter estimates")
    ax.legend(ncol=4, fontsize=7)
    _save(fig, job)
    final = max(abs(float(table[n][-1])) for n in cols)
    peak = max(float(np.max(np.abs(table[n]))) for n in cols)
    return {"curves": len(cols), "final_max_abs": final, "peak_max_abs": peak}


def _render_freqresp(job):
    table = read_table(
        job.inputs["freqresp"],
        required_columns=(
            "freq_hz", "mag_true", "phase_true", "mag_est", "phase_est", "in_band",
        ),
    )
    f = table["freq_hz"]
    band = table["in_band"] > 0.5
    fig, (ax_m, ax_p) = plt.subplots(2, 1, sharex=True, figsize=(8.0, 6.0))
    ax_m.semilogx(f, 20 * np.log10(np.maximum(table["mag_true"], 1e-12)), label="true")
    ax_m.semilogx(
        f, 20 * np.log10(np.maximum(table["mag_est"], 1e-12)), "--", label="identified"
    )
    ax_p.semilogx(f, np.degrees(table["phase_true"]), label="true")
    ax_p.semilogx(f, np.degrees(table["phase_est"]), "--", label="identified")
    if band.any():
        lo, hi = float(f[band].min()), float(f[band].max())
        for ax in (ax_m, ax_p):
            ax.axvspan(lo, hi, color="0.85", zorder=0)
    ax_m.set_ylabel("magnitude [dB]")
    ax_p.set_ylabel("phase [deg]")
    ax_p.set_xlabel("frequency [Hz]")
    ax_m.set_title(job.title or "Identified vs true frequency response")
    ax_m.legend()
    _save(fig, job)
    in_band_err = float(
        np.max(
            np.abs(
                np.log10(np.maximum(table["mag_est"][band], 1e-12))
                - np.log10(np.maximum(table["mag_true"][band], 1e-12))
            )
        )
        * 20.0
    ) if band.any() else float("nan")
    return {"points": f.size, "in_band_mag_err_db": in_band_err}


def _render_spectrum(job):
    table = read_table(
        job.inputs["spectrum"],
        required_columns=("freq_hz", "before_amp", "after_amp"),
    )
    f = table["freq_hz"]
    before, after = table["before_amp"], table["after_amp"]
    x = np.arange(f.size)
    width = 0.38
    fig, ax = plt.subplots()
    ax.bar(x - width / 2, before, width, label="before")
    ax.bar(x + width / 2, after, width, label="after")
    ax.set_yscale("log")
    ax.set_xticks(x, [f"{v:g}" for v in f])
    ax.set_xlabel("frequency [Hz]")
    ax.set_ylabel("error amplitude")
    ax.set_title(job.title or "Error spectrum at the compensation frequencies")
    ax.legend()
    _save(fig, job)
    return {
        "before": before.tolist(),
        "after": after.tolist(),
        "all_reduced": bool(np.all(after < before)),
    }


def _render_feedforward(job):
    table = read_table(job.inputs["period"], required_columns=("k", "u_A"))
    fig, ax = plt.subplots()
    ax.plot(table["k"], table["u_A"])
    ax.set_xlabel("step within one period")
    ax.set_ylabel("feedforward output")
    ax.set_title(job.title or "Learned feedforward signal, one period")
    _save(fig, job)
    return {
        "samples": int(table["k"].size),
        "peak_abs": float(np.max(np.abs(table["u_A"]))),
    }


_RENDERERS = {
    "params": _render_params,
    "theta-m": _render_theta_m,
    "freqresp": _render_freqresp,
    "spectrum": _render_spectrum,
    "feedforward": _render_feedforward,
}


def render(job: PlotJob) -> dict:
    """Render one figure; returns the statistics of the plotted data."""
    if job.kind not in _RENDERERS:
        raise ValueError(f"unknown figure kind {job.kind!r} (choose from {KINDS})")
    with plt.rc_context(_STYLE):
        return _RENDERERS[job.kind](job)
