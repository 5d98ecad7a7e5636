"""Joint recursive estimation of plant and residual-disturbance parameters.

One estimator step, given the measured error e(k):

    y_hat(k) = thA^T phi_e + thB^T phi_u + thM^T phi_R     (estimates at k-1)
    eps0(k)  = e(k) - y_hat(k)
    F(k) = F(k-1) + gamma1(k) (psi psi^T - F(k-1)),  psi = [phi_e; phi_u]
    f(k) = f(k-1) + gamma2(k) (|phi_R|^2 - f(k-1))
    [thA; thB] += gamma1(k) * F(k)^-1 psi   * eps0
    thM       += gamma2(k) * f(k)^-1 phi_R * eps0

The gain updates run first: F(k) already contains the current regressor
outer product, so F^-1 psi is normalized in the psi direction and the
cold-start steps (rank-deficient F) cannot amplify by 1/reg_eps. With
gamma1 = 1/k this is exactly recursive least squares on the plant block.

followed by two safeguards: thA is shrunk until the estimated denominator
is Schur-stable, and thB is rescaled so the estimated numerator magnitude
at every compensation frequency stays inside its allowed band (which also
keeps the synthesis-side block transform invertible). The decreasing gain
sequences gamma_i(k) = max(C / k^p, floor) trade convergence for tracking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky

from .errors import DimensionError, NumericFault, ValidationError
from .lti import harmonic_eval_matrix, is_schur_stable
from .regressor import RegressorBank

_KICK_ETA = 0.1  # relative margin used when a projection rescales estimates


@dataclass(frozen=True)
class GainSchedule:
    """gamma(k) = max(C / k^p, floor), positive and non-increasing for k >= 1."""

    C: float = 1.0
    p: float = 1.0
    floor: float = 0.0

    def __post_init__(self):
        problems = []
        if not 0.0 < self.C < math.inf:
            problems.append("gain constant C must be positive and finite")
        if not 0.0 < self.p <= 1.0:
            problems.append("gain exponent p must be in (0, 1]")
        if self.floor < 0:
            problems.append("gain floor must be non-negative")
        if problems:
            raise ValidationError(problems)

    def __call__(self, k: int) -> float:
        return max(self.C / float(k) ** self.p, self.floor)


@dataclass(frozen=True)
class ProjectionConfig:
    """Safeguard limits for the two estimate projections.

    b_floor is the minimum allowed numerator magnitude at every compensation
    frequency. The optional upper band is b_ceil_ratio times a user-supplied
    nominal magnitude per harmonic; without nominal magnitudes only the
    floor is enforced. shrink_rho is the per-pass contraction applied to the
    denominator estimate when it leaves the stable set.
    """

    b_floor: float = 0.01
    b_ceil_ratio: float = 0.0
    nominal_b_mags: tuple = ()
    schur_margin: float = 1e-9
    shrink_rho: float = 0.9

    def __post_init__(self):
        problems = []
        if self.b_floor <= 0:
            problems.append("b_floor must be positive")
        if not 0.0 < self.shrink_rho < 1.0:
            problems.append("shrink_rho must be in (0, 1)")
        if self.schur_margin < 0:
            problems.append("schur_margin must be non-negative")
        ceil = self.b_ceil()
        if ceil is not None and np.any(ceil <= self.b_floor * (1.0 + _KICK_ETA)):
            problems.append(
                "b_ceil must exceed b_floor (with rescale margin) at every harmonic"
            )
        if problems:
            raise ValidationError(problems)

    def b_ceil(self):
        """Per-harmonic magnitude ceiling, or None when disabled."""
        if self.b_ceil_ratio <= 0 or len(self.nominal_b_mags) == 0:
            return None
        return self.b_ceil_ratio * np.asarray(self.nominal_b_mags, float)


def a_polynomial(theta_A_hat: np.ndarray) -> np.ndarray:
    """Denominator coefficients [1, a_1, ..., a_nA] from the estimate block."""
    return np.concatenate(([1.0], -np.asarray(theta_A_hat, float)))


def project_A(theta_A_hat: np.ndarray, cfg: ProjectionConfig):
    """Shrink the denominator estimate until it is Schur-stable.

    Each pass scales coefficient i by shrink_rho^i, pushing every root of
    the estimated denominator outward by 1/shrink_rho; m passes compose to
    shrink_rho^(i*m). Stability is monotone in the pass count, so the
    minimal count is found by exponential bracketing plus bisection (the
    result is identical to stepping one pass at a time). Always terminates:
    the all-zero estimate is stable. Returns (projected, fired).
    """
    theta = np.asarray(theta_A_hat, float)
    if is_schur_stable(a_polynomial(theta), cfg.schur_margin):
        return theta, False

    lags = np.arange(1, theta.size + 1)

    def stable_after(m: int) -> bool:
        scaled = theta * cfg.shrink_rho ** (lags * m)
        return is_schur_stable(a_polynomial(scaled), cfg.schur_margin)

    m_hi = 1
    while not stable_after(m_hi):
        m_hi *= 2
        if m_hi > 2**40:  # coefficients have long since underflowed to zero
            return np.zeros_like(theta), True
    m_lo = m_hi // 2  # known unstable (or 0)
    while m_hi - m_lo > 1:
        mid = (m_lo + m_hi) // 2
        if stable_after(mid):
            m_hi = mid
        else:
            m_lo = mid
    return theta * cfg.shrink_rho ** (lags * m_hi), True


def project_B(theta_B_hat: np.ndarray, freqs, T: float, cfg: ProjectionConfig):
    """Rescale the numerator estimate into its per-harmonic magnitude band.

    Returns (projected, fired). An exactly-zero estimate gets the canonical
    kick b_1 = b_floor*(1+eta) so the synthesis block transform is
    invertible from the first step.
    """
    theta = np.asarray(theta_B_hat, float)
    E = harmonic_eval_matrix(freqs, T, theta.size)
    return _project_B_cached(theta, E, cfg)


def _project_B_cached(theta: np.ndarray, E: np.ndarray, cfg: ProjectionConfig):
    if not theta.any():
        kicked = np.zeros_like(theta)
        kicked[0] = cfg.b_floor * (1.0 + _KICK_ETA)
        return kicked, True
    mags = np.abs(E @ theta)
    fired = False
    ceil = cfg.b_ceil()
    if ceil is not None:
        worst = float(np.max(mags / ceil))
        if worst > 1.0:
            scale = 1.0 / (worst * (1.0 + _KICK_ETA))
            theta = theta * scale
            mags = mags * scale
            fired = True
    # Floor last: when the band is infeasible for a uniform scaling the
    # lower bound wins, since it is what keeps the block transform
    # invertible (the upper bound is only a loose plant-knowledge cap).
    m_min = float(mags.min())
    if m_min < cfg.b_floor:
        theta = theta * (cfg.b_floor * (1.0 + _KICK_ETA) / m_min)
        fired = True
    return theta, fired


def check_assumption_H(theta_B_hat, true_B, freqs, T: float) -> np.ndarray:
    """Per-harmonic sign check Re(B / B_hat) > 0 (diagnostic only).

    Uses Re(B * conj(B_hat)) which has the same sign without dividing, so a
    vanishing estimate cannot blow up; a zero estimate reports False.
    """
    theta_B_hat = np.asarray(theta_B_hat, float)
    true_B = np.asarray(true_B, float)
    E = harmonic_eval_matrix(freqs, T, theta_B_hat.size)
    bh = E @ theta_B_hat
    bt = harmonic_eval_matrix(freqs, T, true_B.size - 1) @ true_B[1:]
    return (bt * np.conj(bh)).real > 0.0


def update_gains(F, f, phi_e, phi_u, phi_R, gamma1, gamma2, reg_eps: float = 1e-8):
    """Leaky-average updates of the matrix gain F and scalar gain f.

    F' = F + gamma1 (psi psi^T - F) with psi = [phi_e; phi_u];
    f' = f + gamma2 (|phi_R|^2 - f). F' gets a reg_eps*I bump whenever its
    smallest Cholesky pivot falls below reg_eps, keeping it safely
    invertible under rank-deficient excitation.
    """
    psi = np.concatenate((phi_e, phi_u))
    F_new, _ = _update_F(F, psi, gamma1, reg_eps)
    f_new = f + gamma2 * (float(np.dot(phi_R, phi_R)) - f)
    return F_new, f_new


def _update_F(F, psi, gamma1, reg_eps):
    """F recursion plus pivot guard; returns (F', lower Cholesky factor)."""
    F_new = F + gamma1 * (np.outer(psi, psi) - F)
    eps = reg_eps
    for _ in range(8):
        try:
            L = cholesky(F_new, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            F_new = F_new + eps * np.eye(F_new.shape[0])
            eps *= 10.0
            continue
        if float(np.min(np.diagonal(L)) ** 2) < reg_eps:
            F_new = F_new + eps * np.eye(F_new.shape[0])
            eps *= 10.0
            continue
        return F_new, L
    raise NumericFault("gain matrix could not be regularized to positive definite")


class Estimator:
    """Mutable estimator state plus the per-sample adaptation step.

    Owns theta_A_hat/theta_B_hat (views into one plant-parameter vector),
    theta_M_hat, the gain matrix F, scalar gain f and the step counter.
    Single-owner, sequential per control loop. A step that produces any
    non-finite value rolls the whole state back and raises NumericFault.
    """

    def __init__(
        self,
        n_A: int,
        freqs,
        T: float,
        gamma1: GainSchedule | None = None,
        gamma2: GainSchedule | None = None,
        projection: ProjectionConfig | None = None,
        f0: float = 1.0,
        reg_eps: float = 1e-8,
    ):
        freqs = np.atleast_1d(np.asarray(freqs, float))
        if n_A < 1:
            raise ValidationError("n_A must be at least 1")
        if f0 <= 0:
            raise ValidationError("initial gain f0 must be positive")
        self.n_A = n_A
        self.n = freqs.size
        self.freqs = freqs
        self.T = T
        self.gamma1 = gamma1 or GainSchedule(1.0, 1.0, 0.0)
        self.gamma2 = gamma2 or GainSchedule(1.0, 0.75, 0.0)
        self.projection = projection or ProjectionConfig()
        self.reg_eps = reg_eps
        self.theta = np.zeros(2 * n_A)
        self.theta_A = self.theta[:n_A]
        self.theta_B = self.theta[n_A:]
        self.theta_M = np.zeros(2 * self.n)
        self.F = np.eye(2 * n_A) * f0
        self.f = float(self.n)  # the exact limit of |phi_R|^2
        self.k = 0
        self.proj_A_count = 0
        self.proj_B_count = 0
        self._E = harmonic_eval_matrix(freqs, T, n_A)

    def predict(self, bank: RegressorBank, phi_R_k: np.ndarray) -> float:
        """A-priori error estimate from the estimates at k-1."""
        if phi_R_k.size != 2 * self.n:
            raise DimensionError(
                f"phi_R length {phi_R_k.size} does not match 2n={2 * self.n}"
            )
        if bank.n_A != self.n_A:
            raise DimensionError(
                f"bank n_A={bank.n_A} does not match estimator n_A={self.n_A}"
            )
        return float(
            np.dot(self.theta, bank.psi) + np.dot(self.theta_M, phi_R_k)
        )

    def step(
        self,
        bank: RegressorBank,
        phi_R_k: np.ndarray,
        e_k: float,
        gamma1: float | None = None,
        gamma2: float | None = None,
    ):
        """One adaptation step; returns (eps0, proj_A_fired, proj_B_fired).

        Without explicit gains the schedules are evaluated at the sample
        count plus one so F(0) and f(0) keep unit prior weight in the leaky
        averages: with gamma1 = 1/k this makes the plant block exactly
        recursive least squares with ridge prior F(0), which keeps the
        cold-start (rank-deficient data) updates bounded.
        """
        k_next = self.k + 1
        g1 = self.gamma1(k_next + 1) if gamma1 is None else gamma1
        g2 = self.gamma2(k_next + 1) if gamma2 is None else gamma2
        eps0 = e_k - self.predict(bank, phi_R_k)

        backup = (self.theta.copy(), self.theta_M.copy(), self.F, self.f)
        try:
            # Gains first: the estimate update applies F^-1(k), f^-1(k).
            # Overflow here is handled by the probe below, not by warnings.
            with np.errstate(all="ignore"):
                self.F, L = _update_F(self.F, bank.psi, g1, self.reg_eps)
                self.f = self.f + g2 * (float(np.dot(phi_R_k, phi_R_k)) - self.f)
                self.theta += (g1 * eps0) * cho_solve(
                    (L, True), bank.psi, check_finite=False
                )
                self.theta_M += (g2 * eps0 / self.f) * phi_R_k
            # Sum-based probe: any inf/nan entry makes the total non-finite.
            probe = (
                eps0
                + self.f
                + float(self.theta.sum())
                + float(self.theta_M.sum())
                + float(self.F.sum())
            )
            if not math.isfinite(probe) or not self.f > 0:
                raise NumericFault("adaptation step produced non-finite values")
        except NumericFault:
            self.theta[:], self.theta_M[:] = backup[0], backup[1]
            self.F, self.f = backup[2], backup[3]
            raise

        proj_a, fired_a = project_A(self.theta_A, self.projection)
        if fired_a:
            self.theta_A[:] = proj_a
            self.proj_A_count += 1
        proj_b, fired_b = _project_B_cached(self.theta_B, self._E, self.projection)
        if fired_b:
            self.theta_B[:] = proj_b
            self.proj_B_count += 1
        self.k = k_next
        return eps0, fired_a, fired_b

    def b_hat_magnitudes(self) -> np.ndarray:
        """|B_hat(e^{-j w_h T})| at every compensation frequency."""
        return np.abs(self._E @ self.theta_B)
