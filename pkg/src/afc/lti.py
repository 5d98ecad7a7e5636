"""Discrete-time polynomial and transfer-function arithmetic.

Polynomials are in the backward-shift operator: c_0 + c_1 q^-1 + ... + c_m q^-m,
stored as the ordered coefficient list [c_0, ..., c_m]. A transfer function
R = B/A pairs a monic denominator A with a one-sample-delay numerator B
(zero constant term), both of equal declared degree.

Frequency responses substitute q^-1 = exp(-j*omega*T). With that convention
the steady-state response of a filter L to the interleaved sinusoidal
regressor [sin(w_i k T), cos(w_i k T), ...] is a block-diagonal linear map:
each harmonic is rotated/scaled by the 2x2 block built from the magnitude
and phase of L at that frequency (see RotationBlock / build_transform).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npp

from .errors import (
    DimensionError,
    FrequencyRangeError,
    NumericFault,
    ValidationError,
)


class Polynomial:
    """Real polynomial in q^-1 with coefficients [c_0, ..., c_m]."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        c = np.atleast_1d(np.asarray(coeffs, dtype=float))
        if c.ndim != 1 or c.size == 0:
            raise ValidationError("polynomial needs a non-empty 1-D coefficient list")
        if not np.all(np.isfinite(c)):
            raise NumericFault("non-finite polynomial coefficient")
        self.coeffs = c

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def __mul__(self, other: "Polynomial") -> "Polynomial":
        return Polynomial(np.convolve(self.coeffs, other.coeffs))

    def __call__(self, x):
        """Evaluate sum c_i * x^i at scalar or array x (real or complex)."""
        return npp.polyval(x, self.coeffs)

    def __repr__(self):
        return f"Polynomial({self.coeffs.tolist()})"


class TransferFunction:
    """R = B/A with monic A, zero-constant-term B, equal declared degrees."""

    __slots__ = ("A", "B")

    def __init__(self, A, B):
        A = A if isinstance(A, Polynomial) else Polynomial(A)
        B = B if isinstance(B, Polynomial) else Polynomial(B)
        problems = []
        if A.coeffs[0] != 1.0:
            problems.append("A must be monic (A.coeffs[0] == 1)")
        if B.coeffs[0] != 0.0:
            problems.append("B must have a zero constant term (one-sample delay)")
        if A.degree != B.degree:
            problems.append(
                f"degree(A)={A.degree} must equal degree(B)={B.degree}"
            )
        if problems:
            raise ValidationError(problems)
        self.A = A
        self.B = B

    @property
    def order(self) -> int:
        return self.A.degree

    def __repr__(self):
        return f"TransferFunction(A={self.A.coeffs.tolist()}, B={self.B.coeffs.tolist()})"


@dataclass(frozen=True)
class FreqPoint:
    """Magnitude/phase of a polynomial at one frequency (phase in (-pi, pi])."""

    omega: float
    magnitude: float
    phase: float


@dataclass(frozen=True)
class RotationBlock:
    """Scaled 2x2 rotation [[m cos d, m sin d], [-m sin d, m cos d]].

    Acting on one (sin, cos) pair of the regressor it advances the pair's
    phase by d and scales it by m, which is exactly the steady-state action
    of an LTI filter with magnitude m and phase d at that frequency.
    """

    m: float
    delta: float

    def as_matrix(self) -> np.ndarray:
        c = self.m * math.cos(self.delta)
        s = self.m * math.sin(self.delta)
        return np.array([[c, s], [-s, c]])

    def as_complex(self) -> complex:
        """The block encoded as m*exp(j*delta); products of blocks multiply."""
        return self.m * complex(math.cos(self.delta), math.sin(self.delta))

    @classmethod
    def from_freq_point(cls, fp: FreqPoint) -> "RotationBlock":
        return cls(fp.magnitude, fp.phase)


class BlockDiagTransform:
    """Block-diagonal stack of RotationBlocks, one per compensation frequency."""

    __slots__ = ("blocks", "_z")

    def __init__(self, blocks):
        self.blocks = list(blocks)
        if not self.blocks:
            raise ValidationError("transform needs at least one block")
        self._z = np.array([b.as_complex() for b in self.blocks])

    @property
    def n(self) -> int:
        return len(self.blocks)

    def apply(self, phi: np.ndarray) -> np.ndarray:
        """Return D @ phi for an interleaved [sin, cos, ...] vector."""
        return self._complex_apply(phi, np.conj(self._z))

    def apply_transpose(self, theta: np.ndarray) -> np.ndarray:
        """Return D^T @ theta, i.e. (theta^T D)^T."""
        return self._complex_apply(theta, self._z)

    def _complex_apply(self, vec, z):
        vec = np.asarray(vec, dtype=float)
        if vec.size != 2 * self.n:
            raise DimensionError(
                f"vector length {vec.size} does not match 2n={2 * self.n}"
            )
        w = (vec[0::2] + 1j * vec[1::2]) * z
        out = np.empty(2 * self.n)
        out[0::2] = w.real
        out[1::2] = w.imag
        return out

    def as_matrix(self) -> np.ndarray:
        m = np.zeros((2 * self.n, 2 * self.n))
        for i, b in enumerate(self.blocks):
            m[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = b.as_matrix()
        return m


class Filter:
    """Direct-form difference equation y(k) = -sum a_i y(k-i) + sum b_j x(k-j).

    Holds explicit input/output history rings (most recent first),
    initialized to zeros. a[0] must be 1. The pure-FIR case is a = [1].
    """

    __slots__ = ("b", "a", "_x_hist", "_y_hist")

    def __init__(self, b, a=(1.0,)):
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        self.a = np.atleast_1d(np.asarray(a, dtype=float))
        if self.a[0] != 1.0:
            raise ValidationError("denominator must be monic (a[0] == 1)")
        if not (np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.a))):
            raise NumericFault("non-finite filter coefficient")
        self._x_hist = np.zeros(max(self.b.size - 1, 1))
        self._y_hist = np.zeros(max(self.a.size - 1, 1))

    @classmethod
    def from_tf(cls, tf: TransferFunction) -> "Filter":
        return cls(tf.B.coeffs, tf.A.coeffs)

    @classmethod
    def inverse_denominator(cls, a) -> "Filter":
        """The all-pole filter 1/A."""
        return cls([1.0], np.asarray(a, dtype=float))

    def reset(self):
        self._x_hist[:] = 0.0
        self._y_hist[:] = 0.0

    def step(self, x: float) -> float:
        """Advance one sample and return y(k)."""
        if not math.isfinite(x):
            raise NumericFault("non-finite filter input")
        y = self.b[0] * x
        if self.b.size > 1:
            y += float(np.dot(self.b[1:], self._x_hist[: self.b.size - 1]))
        if self.a.size > 1:
            y -= float(np.dot(self.a[1:], self._y_hist[: self.a.size - 1]))
        if not math.isfinite(y):
            raise NumericFault("filter state diverged to non-finite value")
        xh = self._x_hist
        xh[1:] = xh[:-1]
        xh[0] = x
        yh = self._y_hist
        yh[1:] = yh[:-1]
        yh[0] = y
        return y


def filter_step(filt: Filter, x: float) -> float:
    """Functional alias for Filter.step."""
    return filt.step(x)


def harmonic_eval_matrix(freqs, T: float, n_lags: int) -> np.ndarray:
    """Complex matrix E with (E @ b)[h] = sum_i b_i e^{-j w_h T i}, i = 1..n_lags.

    Evaluates a zero-constant-term polynomial [0, b_1, ..., b_n] at every
    frequency in one matrix-vector product; cached by callers that need it
    per sample.
    """
    freqs = np.atleast_1d(np.asarray(freqs, float))
    lags = np.arange(1, n_lags + 1)
    return np.exp(-1j * np.outer(freqs * T, lags))


def freq_response(p: Polynomial, omega: float, T: float) -> FreqPoint:
    """Magnitude and phase of p at q^-1 = exp(-j*omega*T).

    omega*T must lie strictly inside (0, pi): strictly below Nyquist and
    above DC.
    """
    wt = omega * T
    if not 0.0 < wt < math.pi:
        raise FrequencyRangeError(
            f"omega*T = {wt:g} outside the open interval (0, pi)"
        )
    p = p if isinstance(p, Polynomial) else Polynomial(p)
    v = complex(p(complex(math.cos(wt), -math.sin(wt))))
    mag = abs(v)
    phase = math.atan2(v.imag, v.real) if mag > 0.0 else 0.0
    return FreqPoint(omega=omega, magnitude=mag, phase=phase)


def transfer_response(tf: TransferFunction, omega: float, T: float) -> FreqPoint:
    """Magnitude and phase of B/A at q^-1 = exp(-j*omega*T)."""
    num = freq_response(tf.B, omega, T)
    den = freq_response(tf.A, omega, T)
    phase = math.remainder(num.phase - den.phase, 2.0 * math.pi)
    if phase <= -math.pi:
        phase += 2.0 * math.pi
    return FreqPoint(omega=omega, magnitude=num.magnitude / den.magnitude, phase=phase)


def build_transform(p: Polynomial, freqs, T: float) -> BlockDiagTransform:
    """Block-diagonal steady-state transform of p at each frequency.

    Requires all frequencies distinct and strictly inside (0, pi/T).
    """
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    problems = []
    for i, w in enumerate(freqs):
        if not 0.0 < w * T < math.pi:
            problems.append(f"frequency {w:g} rad/s is outside (0, pi/T)")
        for w2 in freqs[:i]:
            if math.isclose(w, w2, rel_tol=1e-12, abs_tol=0.0):
                problems.append(f"duplicate frequency {w:g} rad/s")
    if problems:
        raise ValidationError(problems)
    return BlockDiagTransform(
        [RotationBlock.from_freq_point(freq_response(p, w, T)) for w in freqs]
    )


_MARGIN_POWERS: dict = {}


def is_schur_stable(a_poly, margin: float = 1e-9) -> bool:
    """True iff all roots q of 1 + a_1 q + ... + a_n q^n have |q| > 1 + margin.

    Equivalently the reciprocal polynomial z^n + a_1 z^(n-1) + ... + a_n has
    all roots strictly inside the circle of radius 1/(1+margin). Implemented
    with the root-free Schur-Cohn reduction on margin-scaled coefficients
    (plain floats: this runs once per adaptation step).
    """
    if isinstance(a_poly, Polynomial):
        a = a_poly.coeffs.tolist()
    elif isinstance(a_poly, np.ndarray):
        a = a_poly.tolist()
    else:
        a = list(map(float, a_poly))
    if a[0] != 1.0:
        raise ValidationError("stability test expects a monic polynomial")
    n = len(a) - 1
    if n == 0:
        return True
    pows = _MARGIN_POWERS.get((n, margin))
    if pows is None:
        rho = 1.0 + margin
        pows = [rho**i for i in range(n + 1)]
        _MARGIN_POWERS[(n, margin)] = pows
    # Decreasing-power coefficients of the margin-scaled reciprocal polynomial.
    c = [a[i] * pows[i] for i in range(n + 1)]
    m = n
    while m >= 1:
        c0 = c[0]
        cm = c[m]
        if abs(cm) >= c0:
            return False
        k = cm / c0
        c = [c[i] - k * c[m - i] for i in range(m)]
        m -= 1
    return True
