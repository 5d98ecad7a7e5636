"""Closed-loop desk-scale experiment: plant truth, loop wiring, spectra.

The measured error obeys

    e(k) = B/A [u(k) + u_A(k)] + (1/A)[w(k)] + r(k)

with r(k) injected directly at the error as theta_R_bar^T phi_R(k) (its
packed parameters are the simulation ground truth) and w(k) i.i.d.
Gaussian from a seeded Philox counter-based generator (ziggurat normals).
One experiment is one sequential loop; independent experiments share no
mutable state and may run in parallel.

Per step the loop does: phi_R -> excitation -> control output -> plant
step -> adaptation step -> synthesis step -> history push.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npp

from .adaptation import check_assumption_H
from .errors import NumericFault, ValidationError, WindowError
from .excitation import PrbsSequence, excitation_fast
from .lti import (
    Filter,
    TransferFunction,
    build_transform,
    harmonic_eval_matrix,
    is_schur_stable,
)
from .regressor import DisturbanceSpec, RegressorBank, phi_R


@dataclass(frozen=True)
class PlantTruth:
    """True plant, ground-truth disturbance parameters, and noise level."""

    tf: TransferFunction
    theta_R_bar: np.ndarray
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "theta_R_bar", np.asarray(self.theta_R_bar, float)
        )
        problems = []
        if not is_schur_stable(self.tf.A):
            problems.append("true A must be Schur-stable (stabilized closed loop)")
        if self.theta_R_bar.size % 2:
            problems.append("theta_R_bar must have even length (sin/cos pairs)")
        if self.noise_sigma < 0:
            problems.append("noise sigma must be non-negative")
        if problems:
            raise ValidationError(problems)


@dataclass(frozen=True)
class HarmonicAmplitude:
    omega: float
    amplitude: float


class PlantSim:
    """Single-owner plant memory: B/A and 1/A filter states plus noise RNG."""

    def __init__(self, truth: PlantTruth, dist: DisturbanceSpec):
        if truth.theta_R_bar.size != 2 * dist.n:
            raise ValidationError(
                "theta_R_bar length must be twice the harmonic count"
            )
        self.truth = truth
        self.dist = dist
        self._f_plant = Filter.from_tf(truth.tf)
        self._f_noise = Filter.inverse_denominator(truth.tf.A.coeffs)
        self._rng = np.random.Generator(np.random.Philox(truth.seed))
        self._phi_buf = np.empty(2 * dist.n)

    def draw_noise(self, count: int) -> np.ndarray:
        """Next `count` noise samples from the seeded generator."""
        if self.truth.noise_sigma == 0.0:
            return np.zeros(count)
        return self.truth.noise_sigma * self._rng.standard_normal(count)

    def step(self, u_k: float, uA_k: float, k: int, w_k: float | None = None,
             phi_R_k: np.ndarray | None = None) -> float:
        """Advance the plant one sample and return e(k)."""
        if w_k is None:
            w_k = float(self.draw_noise(1)[0])
        if phi_R_k is None:
            phi_R_k = phi_R(self.dist, k, out=self._phi_buf)
        e = (
            self._f_plant.step(u_k + uA_k)
            + self._f_noise.step(w_k)
            + float(np.dot(self.truth.theta_R_bar, phi_R_k))
        )
        if not math.isfinite(e):
            raise NumericFault("plant output diverged", step=k)
        return e


def sim_step(sim: PlantSim, u_k: float, uA_k: float, k: int) -> float:
    """Functional alias for PlantSim.step with internal noise draw."""
    return sim.step(u_k, uA_k, k)


def random_plant(
    order: int,
    omegas,
    T: float,
    rng: np.random.Generator,
    modulus_range=(0.3, 0.9),
    min_b_mag: float = 0.1,
    max_tries: int = 500,
) -> TransferFunction:
    """Schur-stable random plant with usable numerator gain at the harmonics.

    Pole moduli (of the reciprocal denominator) are drawn inside
    modulus_range; the numerator is redrawn until its magnitude at every
    compensation frequency is at least min_b_mag.
    """
    lo, hi = modulus_range
    if not (0.0 <= lo < hi < 1.0):
        raise ValidationError("pole modulus range must satisfy 0 <= lo < hi < 1")
    roots = []
    remaining = order
    while remaining >= 2:
        r = rng.uniform(lo, hi)
        ang = rng.uniform(0.15, math.pi - 0.15)
        roots.extend([r * np.exp(1j * ang), r * np.exp(-1j * ang)])
        remaining -= 2
    if remaining:
        roots.append(rng.uniform(lo, hi) * (1.0 if rng.uniform() < 0.5 else -1.0))
    a = npp.polyfromroots(roots).real[::-1]
    E = harmonic_eval_matrix(omegas, T, order)
    for _ in range(max_tries):
        b = rng.standard_normal(order)
        if float(np.min(np.abs(E @ b))) >= min_b_mag:
            return TransferFunction(A=a, B=np.concatenate(([0.0], b)))
    raise ValidationError(
        f"could not draw a numerator with magnitude >= {min_b_mag} at all "
        f"harmonics in {max_tries} tries"
    )


def ground_truth_theta_R(truth: PlantTruth, freqs, T: float) -> np.ndarray:
    """theta_R = D_A^T theta_R_bar: the disturbance parameters after the
    denominator acts on the injected disturbance."""
    d_a = build_transform(truth.tf.A, freqs, T)
    return d_a.apply_transpose(truth.theta_R_bar)


def harmonic_amplitude(signal, omega: float, T: float) -> HarmonicAmplitude:
    """Single-bin discrete Fourier amplitude (2/N)|sum e(k) exp(-j w k T)|.

    The window must cover an integer number of periods of omega, otherwise
    neighbouring content leaks into the bin and the estimate is invalid.
    """
    s = np.asarray(signal, float)
    n = s.size
    if n == 0:
        raise WindowError("empty analysis window")
    cycles = omega * n * T / (2.0 * math.pi)
    if abs(cycles - round(cycles)) > 1e-6 * max(1.0, abs(cycles)):
        raise WindowError(
            f"window of {n} samples covers {cycles:.6f} periods of "
            f"omega={omega:g}; an integer period count is required"
        )
    phase = np.exp(-1j * (omega * T) * np.arange(n))
    return HarmonicAmplitude(omega, 2.0 / n * abs(complex(np.dot(s, phase))))


def measure_harmonics(signal, omegas, T: float) -> np.ndarray:
    return np.array(
        [harmonic_amplitude(signal, float(w), T).amplitude for w in np.atleast_1d(omegas)]
    )


@dataclass
class SimTrace:
    """Captured per-step records (possibly decimated) plus the run summary.

    e_full always holds the undecimated error signal; summary statistics
    are computed from it, never from the decimated records.
    """

    n_A: int
    n: int
    records: dict = field(default_factory=dict)
    e_full: np.ndarray = field(default_factory=lambda: np.empty(0))
    summary: dict = field(default_factory=dict)

    def header(self):
        cols = ["k", "e", "u", "u_A", "eps0", "theta_M_norm"]
        cols += [f"theta_A_{i + 1}" for i in range(self.n_A)]
        cols += [f"theta_B_{i + 1}" for i in range(self.n_A)]
        cols += [f"theta_M_{i + 1}" for i in range(2 * self.n)]
        cols += ["proj_A_fired", "proj_B_fired"]
        return cols

    @property
    def n_records(self) -> int:
        return self.records["k"].size if self.records else 0

    def to_csv(self, path) -> None:
        r = self.records
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.header()) + "\n")
            for i in range(self.n_records):
                row = [
                    str(int(r["k"][i])),
                    repr(float(r["e"][i])),
                    repr(float(r["u"][i])),
                    repr(float(r["u_A"][i])),
                    repr(float(r["eps0"][i])),
                    repr(float(r["theta_M_norm"][i])),
                ]
                row += [repr(float(v)) for v in r["theta_A"][i]]
                row += [repr(float(v)) for v in r["theta_B"][i]]
                row += [repr(float(v)) for v in r["theta_M"][i]]
                row += [str(int(r["proj_A"][i])), str(int(r["proj_B"][i]))]
                fh.write(",".join(row) + "\n")


def _empty_records(n_rec: int, n_A: int, n: int) -> dict:
    return {
        "k": np.zeros(n_rec, dtype=np.int64),
        "e": np.zeros(n_rec),
        "u": np.zeros(n_rec),
        "u_A": np.zeros(n_rec),
        "eps0": np.zeros(n_rec),
        "theta_M_norm": np.zeros(n_rec),
        "theta_A": np.zeros((n_rec, n_A)),
        "theta_B": np.zeros((n_rec, n_A)),
        "theta_M": np.zeros((n_rec, 2 * n)),
        "proj_A": np.zeros(n_rec, dtype=bool),
        "proj_B": np.zeros(n_rec, dtype=bool),
    }


def run_baseline(
    truth: PlantTruth,
    dist: DisturbanceSpec,
    steps: int,
) -> np.ndarray:
    """Disturbance-only error signal (no feedforward, no excitation).

    Same plant and noise stream as the adaptive run; this is the
    adaptation-off reference the per-harmonic attenuation is measured
    against.
    """
    sim = PlantSim(truth, dist)
    noise = sim.draw_noise(steps)
    e = np.empty(steps)
    buf = np.empty(2 * dist.n)
    for k in range(steps):
        pr = phi_R(dist, k, out=buf)
        e[k] = sim.step(0.0, 0.0, k, w_k=noise[k], phi_R_k=pr)
    return e


def replay_feedforward(
    truth: PlantTruth,
    dist: DisturbanceSpec,
    theta_D: np.ndarray,
    steps: int,
) -> np.ndarray:
    """Open-loop replay of a frozen feedforward law (no excitation, no
    adaptation): e(k) under u_A = theta_D^T phi_R alone."""
    sim = PlantSim(truth, dist)
    noise = sim.draw_noise(steps)
    theta_D = np.asarray(theta_D, float)
    e = np.empty(steps)
    buf = np.empty(2 * dist.n)
    for k in range(steps):
        pr = phi_R(dist, k, out=buf)
        u_a = float(np.dot(theta_D, pr))
        e[k] = sim.step(0.0, u_a, k, w_k=noise[k], phi_R_k=pr)
    return e


def run_experiment(cfg) -> SimTrace:
    """Execute a full adaptive experiment described by an ExperimentConfig.

    Numeric faults abort the run and carry the failing step index. With a
    freeze step configured, adaptation, synthesis and excitation all stop
    there and the learned gains replay as a pure feedforward action for the
    remaining samples.
    """
    t_start = time.perf_counter()
    dist = cfg.make_disturbance()
    exc = cfg.make_excitation(dist)
    truth = make_truth(cfg, dist)
    est = cfg.make_estimator(dist)
    ctrl = cfg.make_controller(dist)
    bank = RegressorBank(est.n_A)

    steps = cfg.run.steps
    decimate = cfg.run.decimate
    freeze_at = cfg.run.freeze_at if cfg.run.freeze_at is not None else steps + 1

    sim = PlantSim(truth, dist)
    noise = sim.draw_noise(steps)
    prbs_seq = PrbsSequence(exc.prbs_seed, exc.amplitude) if exc.mode == "prbs" else None

    n_rec = len(range(0, steps, decimate)) if steps > 0 else 0
    rec = _empty_records(n_rec, est.n_A, est.n)
    e_full = np.empty(steps)
    buf = np.empty(2 * dist.n)
    freqs = dist.omegas
    T = dist.T
    i_rec = 0

    for k in range(steps):
        pr = phi_R(dist, k, out=buf)
        frozen = k >= freeze_at
        if frozen:
            u = 0.0
        elif prbs_seq is not None:
            u = prbs_seq.value(k)
        else:
            u = excitation_fast(exc, pr, k, T)
        u_a = ctrl.control_output(pr)
        try:
            e_k = sim.step(u, u_a, k, w_k=noise[k], phi_R_k=pr)
            if not frozen:
                eps0, fired_a, fired_b = est.step(bank, pr, e_k)
                ctrl.maybe_refresh_db(est.theta_B, freqs, T)
                ctrl.synthesis_step(est.theta_M)
            else:
                eps0 = e_k - est.predict(bank, pr)
                fired_a = fired_b = False
        except NumericFault as nf:
            raise NumericFault(str(nf), step=k) from nf
        e_full[k] = e_k
        if k % decimate == 0:
            rec["k"][i_rec] = k
            rec["e"][i_rec] = e_k
            rec["u"][i_rec] = u
            rec["u_A"][i_rec] = u_a
            rec["eps0"][i_rec] = eps0
            rec["theta_M_norm"][i_rec] = float(np.linalg.norm(est.theta_M))
            rec["theta_A"][i_rec] = est.theta_A
            rec["theta_B"][i_rec] = est.theta_B
            rec["theta_M"][i_rec] = est.theta_M
            rec["proj_A"][i_rec] = fired_a
            rec["proj_B"][i_rec] = fired_b
            i_rec += 1
        bank.push(e_k, u, u_a)

    trace = SimTrace(n_A=est.n_A, n=est.n, records=rec, e_full=e_full)
    trace.summary = _build_summary(
        cfg, dist, truth, est, ctrl, e_full, time.perf_counter() - t_start
    )
    return trace


def make_truth(cfg, dist: DisturbanceSpec) -> PlantTruth:
    """PlantTruth from the config: explicit coefficients or a seeded draw."""
    p = cfg.plant
    if p.mode == "explicit":
        tf = TransferFunction(A=p.a, B=p.b)
    else:
        rng = np.random.Generator(np.random.Philox(p.seed))
        tf = random_plant(
            p.order,
            dist.omegas,
            dist.T,
            rng,
            modulus_range=tuple(p.root_modulus),
            min_b_mag=p.min_b_mag,
        )
    return PlantTruth(
        tf=tf,
        theta_R_bar=cfg.theta_R_bar(dist),
        noise_sigma=p.noise_sigma,
        seed=cfg.run.seed,
    )


def _build_summary(cfg, dist, truth, est, ctrl, e_full, runtime_s) -> dict:
    steps = e_full.size
    if steps and not np.all(np.isfinite(e_full)):
        raise NumericFault("trace contains non-finite error samples")
    window = cfg.run.spectrum_window
    settle = cfg.run.settle

    before = after = None
    if window and steps >= window:
        base_e = run_baseline(truth, dist, settle + window)
        before = measure_harmonics(base_e[settle:], dist.omegas, dist.T)
        after = measure_harmonics(e_full[steps - window :], dist.omegas, dist.T)

    theta_A_true = -truth.tf.A.coeffs[1:]
    theta_B_true = truth.tf.B.coeffs[1:]
    theta_plant_true = np.concatenate((theta_A_true, theta_B_true))
    theta_R = ground_truth_theta_R(truth, dist.omegas, dist.T)
    norm_R = float(np.linalg.norm(theta_R))
    d_b_true = build_transform(truth.tf.B, dist.omegas, dist.T)
    theta_M_true = d_b_true.apply_transpose(ctrl.theta_D) + theta_R

    def _rel(err, ref):
        return float(np.linalg.norm(err) / max(np.linalg.norm(ref), 1e-300))

    summary = {
        "steps": int(steps),
        "seed": int(cfg.run.seed),
        "freeze_at": cfg.run.freeze_at,
        "harmonics_hz": [float(w) / (2.0 * math.pi) for w in dist.omegas],
        "before_amplitudes": None if before is None else [float(v) for v in before],
        "after_amplitudes": None if after is None else [float(v) for v in after],
        "attenuation_db": None
        if before is None
        else [
            20.0 * math.log10(max(a, 1e-300) / max(b, 1e-300))
            for a, b in zip(after, before)
        ],
        "theta_A_rel_error": _rel(est.theta_A - theta_A_true, theta_A_true),
        "theta_B_rel_error": _rel(est.theta_B - theta_B_true, theta_B_true),
        "theta_plant_rel_error": _rel(
            est.theta - theta_plant_true, theta_plant_true
        ),
        "theta_M_residue_ratio": float(np.linalg.norm(est.theta_M))
        / max(norm_R, 1e-300),
        "theta_M_true_residue_ratio": float(np.linalg.norm(theta_M_true))
        / max(norm_R, 1e-300),
        "residue_target": ctrl.residue_target.factor,
        "assumption_H_ok": [
            bool(v)
            for v in check_assumption_H(
                est.theta_B, truth.tf.B.coeffs, dist.omegas, dist.T
            )
        ],
        "proj_A_count": int(est.proj_A_count),
        "proj_B_count": int(est.proj_B_count),
        "theta_A_final": [float(v) for v in est.theta_A],
        "theta_B_final": [float(v) for v in est.theta_B],
        "theta_M_final": [float(v) for v in est.theta_M],
        "theta_D_final": [float(v) for v in ctrl.theta_D],
        "plant_a": [float(v) for v in truth.tf.A.coeffs],
        "plant_b": [float(v) for v in truth.tf.B.coeffs],
        "plant_order": int(truth.tf.order),
        "spectrum_window": int(window) if window else 0,
        "settle": int(settle),
        "runtime_s": float(runtime_s),
    }
    return summary
