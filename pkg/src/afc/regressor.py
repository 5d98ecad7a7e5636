"""Sinusoidal regressor generation and measured-signal history banks.

The analytic regressor phi_R(k) interleaves [sin(w_i k T), cos(w_i k T)]
pairs for the n compensation frequencies. It is computed directly from the
integer step index k (no recursive oscillator state), so it cannot drift
over long runs; for runs beyond 2^52 samples k is reduced modulo the
fundamental period when the harmonics are commensurate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DimensionError, NumericFault, ValidationError

# Above this step count k*T loses integer precision; fall back to the
# periodic reduction when one is available.
_K_EXACT_LIMIT = 2**52


@dataclass(frozen=True)
class DisturbanceSpec:
    """n compensation frequencies with ground-truth amplitude/phase per harmonic.

    omegas are rad/s, strictly increasing, each inside (0, pi/T); amps are
    in error-signal units and non-negative; phases in radians; T is the
    sample period in seconds.
    """

    omegas: np.ndarray
    amps: np.ndarray
    phases: np.ndarray
    T: float

    def __post_init__(self):
        object.__setattr__(self, "omegas", np.atleast_1d(np.asarray(self.omegas, float)))
        object.__setattr__(self, "amps", np.atleast_1d(np.asarray(self.amps, float)))
        object.__setattr__(self, "phases", np.atleast_1d(np.asarray(self.phases, float)))
        problems = []
        if self.T <= 0 or not math.isfinite(self.T):
            problems.append("sample period T must be positive and finite")
        if not (self.omegas.size == self.amps.size == self.phases.size):
            problems.append("omegas, amps and phases must have equal length")
        if self.omegas.size == 0:
            problems.append("at least one compensation frequency required")
        if np.any(np.diff(self.omegas) <= 0):
            problems.append("frequencies must be strictly increasing")
        if self.T > 0 and np.any((self.omegas * self.T <= 0) | (self.omegas * self.T >= math.pi)):
            problems.append("every omega*T must lie strictly inside (0, pi)")
        if np.any(self.amps < 0):
            problems.append("amplitudes must be non-negative")
        if problems:
            raise ValidationError(problems)

    @classmethod
    def from_harmonics(cls, harmonics, sample_rate_hz: float) -> "DisturbanceSpec":
        """Build from [(freq_hz, amp, phase_rad), ...] rows and a sample rate."""
        rows = [tuple(map(float, h)) for h in harmonics]
        freqs = np.array([r[0] for r in rows])
        return cls(
            omegas=2.0 * math.pi * freqs,
            amps=np.array([r[1] for r in rows]),
            phases=np.array([r[2] for r in rows]),
            T=1.0 / float(sample_rate_hz),
        )

    @property
    def n(self) -> int:
        return self.omegas.size

    def fundamental_period_samples(self, max_denominator: int = 10**6):
        """Common period of all harmonics in samples, or None if incommensurate.

        Each normalized frequency w_i*T/(2*pi) is matched to a nearby
        rational and the candidate period is the lcm of the denominators.
        Incommensurate frequencies always admit accidental rational
        approximants, so the candidate is accepted only if every frequency
        completes an integer cycle count over it to within 1e-6 cycles
        (phase error amplifies with the period, which separates true
        commensurate sets from approximants).
        """
        period = 1
        for w in self.omegas:
            r = w * self.T / (2.0 * math.pi)
            frac = Fraction(r).limit_denominator(max_denominator)
            if abs(float(frac) - r) > 1e-9 * max(r, 1.0):
                return None
            period = period * frac.denominator // math.gcd(period, frac.denominator)
            if period > 10**9:
                return None
        for w in self.omegas:
            cycles = w * self.T / (2.0 * math.pi) * period
            if abs(cycles - round(cycles)) > 1e-6:
                return None
        return period

    def theta(self) -> np.ndarray:
        """Ground-truth parameter packing [a_i cos(d_i), a_i sin(d_i), ...]."""
        return packed_theta(self.amps, self.phases)


def packed_theta(amps, phases) -> np.ndarray:
    """Interleave amplitudes/phases so theta^T phi_R(k) = sum a_i sin(w_i k T + d_i)."""
    amps = np.asarray(amps, float)
    phases = np.asarray(phases, float)
    out = np.empty(2 * amps.size)
    out[0::2] = amps * np.cos(phases)
    out[1::2] = amps * np.sin(phases)
    return out


def phi_R(spec: DisturbanceSpec, k: int, out: np.ndarray | None = None) -> np.ndarray:
    """Regressor [sin(w_1 k T), cos(w_1 k T), ..., sin(w_n k T), cos(w_n k T)]."""
    if k < 0:
        raise ValidationError("step index k must be non-negative")
    if k > _K_EXACT_LIMIT:
        period = spec.fundamental_period_samples()
        if period is not None:
            k = k % period
    ph = spec.omegas * (k * spec.T)
    if out is None:
        out = np.empty(2 * spec.n)
    out[0::2] = np.sin(ph)
    out[1::2] = np.cos(ph)
    return out


def disturbance_value(theta, spec: DisturbanceSpec, k: int) -> float:
    """theta^T phi_R(k)."""
    theta = np.asarray(theta, float)
    if theta.size != 2 * spec.n:
        raise DimensionError(
            f"theta length {theta.size} does not match 2n={2 * spec.n}"
        )
    return float(np.dot(theta, phi_R(spec, k)))


class RegressorBank:
    """Rolling length-n_A histories of e, u and u_A (most recent first).

    phi_e and phi_u are views into one contiguous buffer psi = [phi_e; phi_u]
    so the estimator can use them without copying. Single-owner mutable
    state; entry j of each history equals the signal at time k-1-j.
    """

    __slots__ = ("n_A", "psi", "phi_e", "phi_u", "phi_uA", "k")

    def __init__(self, n_A: int):
        if n_A < 1:
            raise ValidationError("n_A must be at least 1")
        self.n_A = n_A
        self.psi = np.zeros(2 * n_A)
        self.phi_e = self.psi[:n_A]
        self.phi_u = self.psi[n_A:]
        self.phi_uA = np.zeros(n_A)
        self.k = 0

    def push(self, e_k: float, u_k: float, uA_k: float) -> None:
        """Shift histories by one sample, dropping the oldest entries."""
        if not (math.isfinite(e_k) and math.isfinite(u_k) and math.isfinite(uA_k)):
            raise NumericFault("non-finite sample pushed into regressor bank")
        for hist, val in ((self.phi_e, e_k), (self.phi_u, u_k), (self.phi_uA, uA_k)):
            hist[1:] = hist[:-1]
            hist[0] = val
        self.k += 1
