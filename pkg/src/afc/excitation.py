"""Exogenous excitation signals and persistency-of-excitation checks.

The shaped excitation places sideband sinusoids symmetrically around every
compensation frequency:

    u(k) = gain(k)/2 * sum_i [sin((w_i + d)kT) + sin((w_i - d)kT)]

which collapses, via sin(a+b) + sin(a-b) = 2 sin(a) cos(b), to

    u(k) = gain(k) * cos(d kT) * sum_i sin(w_i kT)

so the sine slots of an already-computed regressor give the whole sum for
the cost of one extra cosine. Several shift values d can be stacked when a
higher excitation order is needed. A maximal-length PRBS generator covers
the flat-spectrum alternative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientData, ValidationError
from .regressor import DisturbanceSpec

_LFSR_MASK = (1 << 31) - 1


@dataclass(frozen=True)
class ExcitationSpec:
    """Excitation profile: shaped sidebands or PRBS.

    amplitude is the base gain in plant-input units; the per-step gain is
    max(amplitude * decay**k, floor) (decay = 1 keeps it constant). deltas
    holds one or more sideband shifts in rad/s, each a small fraction of
    the lowest compensation frequency.
    """

    mode: str = "shaped"
    amplitude: float = 1.0
    deltas: tuple = ()
    decay: float = 1.0
    floor: float = 0.0
    prbs_seed: int = 1

    def __post_init__(self):
        problems = []
        if self.mode not in ("shaped", "prbs"):
            problems.append(f"unknown excitation mode {self.mode!r}")
        if self.amplitude < 0:
            problems.append("excitation amplitude must be non-negative")
        if self.mode == "shaped" and len(self.deltas) == 0:
            problems.append("shaped excitation needs at least one sideband shift")
        if any(d <= 0 for d in self.deltas):
            problems.append("sideband shifts must be positive")
        if not 0.0 < self.decay <= 1.0:
            problems.append("gain decay must be in (0, 1]")
        if self.floor < 0:
            problems.append("gain floor must be non-negative")
        if problems:
            raise ValidationError(problems)

    def gain(self, k):
        """Per-step gain; k may be an int or an integer array."""
        if self.decay == 1.0:
            return self.amplitude
        if isinstance(k, np.ndarray):
            return np.maximum(self.amplitude * self.decay**k, self.floor)
        return max(self.amplitude * self.decay**k, self.floor)

    def pe_order_claim(self, n: int) -> int:
        """Conservative excitation order: 2n per sideband-shift term."""
        return 2 * n * len(self.deltas)


def default_delta(dist: DisturbanceSpec, fraction: float = 0.02) -> float:
    """Sideband shift as a small fraction of the lowest compensation frequency."""
    return fraction * float(dist.omegas[0])


def validate_excitation(spec: ExcitationSpec, dist: DisturbanceSpec, n_A: int | None = None):
    """Cross-field checks between excitation and disturbance.

    Returns the list of violations (empty when valid): shifts must stay
    below the lowest frequency, sidebands must not collide with any
    compensation frequency or each other, everything stays below Nyquist,
    and a shaped signal must claim excitation order >= 2*n_A when n_A is
    given.
    """
    problems = []
    if spec.mode == "prbs":
        return problems
    wmin = float(dist.omegas[0])
    tol = 1e-9 * wmin
    sidebands = []
    for d in spec.deltas:
        if d >= wmin:
            problems.append(
                f"sideband shift {d:g} rad/s must be below the lowest "
                f"compensation frequency {wmin:g}"
            )
        for w in dist.omegas:
            for sb in (w + d, w - d):
                sidebands.append(sb)
                if np.any(np.abs(dist.omegas - sb) <= tol):
                    problems.append(
                        f"sideband {sb:g} rad/s collides with a compensation "
                        "frequency (would alias into the disturbance subspace)"
                    )
    if sidebands and max(sidebands) * dist.T >= math.pi:
        problems.append("a sideband frequency reaches Nyquist")
    if n_A is not None and spec.pe_order_claim(dist.n) < 2 * n_A:
        problems.append(
            f"shaped excitation order {spec.pe_order_claim(dist.n)} is below the "
            f"required persistency-of-excitation order {2 * n_A}; add another "
            "sideband shift or switch to PRBS mode"
        )
    return problems


def excitation_direct(spec: ExcitationSpec, dist: DisturbanceSpec, k):
    """Literal sideband sum: gain/2 * sum_i [sin((w_i+d)kT) + sin((w_i-d)kT)].

    k may be a scalar step index or an integer array (vectorized over steps).
    """
    if isinstance(k, np.ndarray):
        t = k * dist.T
        ph = np.outer(t, dist.omegas)
        total = np.zeros(t.shape)
        for d in spec.deltas:
            shift = (d * t)[:, None]
            total += 0.5 * np.sum(np.sin(ph + shift) + np.sin(ph - shift), axis=1)
        return spec.gain(k) * total
    t = k * dist.T
    total = 0.0
    for d in spec.deltas:
        shift = d * t
        ph = dist.omegas * t
        total += 0.5 * float(np.sum(np.sin(ph + shift) + np.sin(ph - shift)))
    return spec.gain(k) * total


def excitation_fast(spec: ExcitationSpec, phi_R_k: np.ndarray, k, T: float):
    """Regressor-reuse form: gain * sum_j cos(d_j kT) * sum_i sin(w_i kT).

    For an array of steps, phi_R_k is the matching (steps, 2n) regressor
    matrix.
    """
    if isinstance(k, np.ndarray):
        t = k * T
        cos_sum = np.zeros(t.shape)
        for d in spec.deltas:
            cos_sum += np.cos(d * t)
        return spec.gain(k) * cos_sum * np.sum(phi_R_k[:, 0::2], axis=1)
    t = k * T
    cos_sum = 0.0
    for d in spec.deltas:
        cos_sum += math.cos(d * t)
    return spec.gain(k) * cos_sum * float(np.sum(phi_R_k[0::2]))


class PrbsSequence:
    """Maximal-length shift-register sequence of +/- amplitude values.

    Degree-31 Fibonacci LFSR (taps 31 and 28, period 2^31 - 1), fully
    determined by the seed. value(k) is O(1) when consumed sequentially;
    random access rewinds to the seed and advances.
    """

    def __init__(self, seed: int, amplitude: float):
        self.seed = int(seed)
        self.amplitude = float(amplitude)
        self._state = (self.seed & _LFSR_MASK) or 1
        self._pos = 0

    def _advance(self) -> int:
        s = self._state
        bit = ((s >> 30) ^ (s >> 27)) & 1
        self._state = ((s << 1) | bit) & _LFSR_MASK
        self._pos += 1
        return self._state & 1

    def value(self, k: int) -> float:
        if k < self._pos:
            self._state = (self.seed & _LFSR_MASK) or 1
            self._pos = 0
        while self._pos <= k:
            bit = self._advance()
        return self.amplitude if bit else -self.amplitude

    def take(self, count: int) -> np.ndarray:
        """Next `count` values from the current position."""
        out = np.empty(count)
        for i in range(count):
            out[i] = self.amplitude if self._advance() else -self.amplitude
        return out


def prbs(seed: int, amplitude: float, k: int) -> float:
    """Value of the seeded PRBS at step k (advances from the seed; O(k))."""
    return PrbsSequence(seed, amplitude).value(k)


def pe_order(signal, m: int, tol: float):
    """Check persistency of excitation of order m over a signal window.

    Forms the time-averaged outer product R of m-length delay vectors and
    tests whether its minimum eigenvalue (cyclic Jacobi iteration,
    deterministic) exceeds tol. Returns (passed, min_eigenvalue).
    """
    s = np.asarray(signal, float)
    if m < 1:
        raise ValidationError("order m must be at least 1")
    if s.size < 10 * m:
        raise InsufficientData(
            f"window of {s.size} samples is too short for order {m} "
            f"(need at least {10 * m})"
        )
    count = s.size - m + 1
    r = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            # sum over k of s(k-i)*s(k-j) for k = m-1 .. N-1
            v = float(np.dot(s[m - 1 - i : s.size - i], s[m - 1 - j : s.size - j]))
            r[i, j] = r[j, i] = v / count
    lam = jacobi_min_eigenvalue(r)
    return bool(lam > tol), lam


def jacobi_min_eigenvalue(a: np.ndarray, sweeps: int = 64) -> float:
    """Smallest eigenvalue of a symmetric matrix by cyclic Jacobi rotations."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    if n == 1:
        return float(a[0, 0])
    scale = max(float(np.max(np.abs(a))), 1.0)
    for _ in range(sweeps):
        off = math.sqrt(float(np.sum(np.tril(a, -1) ** 2)))
        if off <= 1e-15 * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-18 * scale:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.hypot(1.0, tau))
                c = 1.0 / math.hypot(1.0, t)
                s = t * c
                rot = np.array([[c, -s], [s, c]])
                a[[p, q], :] = rot @ a[[p, q], :]
                a[:, [p, q]] = a[:, [p, q]] @ rot.T
                a[p, q] = a[q, p] = 0.0
    return float(np.min(np.diag(a)))
