"""Feedforward control synthesis.

The control signal is u_A(k) = theta_D_hat^T phi_R(k). theta_D_hat follows
the leaky (Ridge) gradient rule

    theta_D_hat^T <- beta * theta_D_hat^T - alpha * theta_M_hat^T DB_hat^-1

where DB_hat is the block-diagonal transform of the estimated numerator at
the compensation frequencies. The leakage beta < 1 keeps the recursion
bounded (no open integrator pole); the price is a non-zero steady-state
residue scaled by (1-beta)/(1-beta+alpha).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ContractViolation,
    DimensionError,
    NumericFault,
    SingularBlockError,
    ValidationError,
)
from .lti import (
    BlockDiagTransform,
    Polynomial,
    RotationBlock,
    build_transform,
    harmonic_eval_matrix,
)
from .regressor import DisturbanceSpec, phi_R


@dataclass(frozen=True)
class ResidueTarget:
    """Steady-state residual fraction (1-beta)/(1-beta+alpha) of theta_R."""

    factor: float

    @classmethod
    def from_gains(cls, alpha: float, beta: float) -> "ResidueTarget":
        return cls((1.0 - beta) / (1.0 - beta + alpha))

    @property
    def db(self) -> float:
        return 20.0 * math.log10(self.factor)


def rebuild_DB_hat(theta_B_hat, freqs, T: float) -> BlockDiagTransform:
    """Block transform of the estimated numerator B_hat at each frequency."""
    theta_B_hat = np.asarray(theta_B_hat, float)
    b_poly = Polynomial(np.concatenate(([0.0], theta_B_hat)))
    return build_transform(b_poly, freqs, T)


def invert_block(rb: RotationBlock, min_magnitude: float = 0.0) -> RotationBlock:
    """Inverse of a scaled rotation: magnitude 1/m, phase -delta."""
    if rb.m <= min_magnitude:
        raise SingularBlockError(
            f"block magnitude {rb.m:g} at or below the floor {min_magnitude:g}"
        )
    return RotationBlock(1.0 / rb.m, -rb.delta)


class Controller:
    """Feedforward gain state theta_D_hat plus the synthesis update.

    Gains must satisfy 0 < alpha and alpha <= (1-beta)*ratio_max and
    beta < 1 (the leaky-gradient admissibility relation); violations are
    hard errors. The cached numerator transform is refreshed from
    theta_B_hat every db_refresh_stride samples (default: every sample).
    """

    def __init__(
        self,
        n: int,
        alpha: float,
        beta: float,
        ratio_max: float = 1000.0,
        b_floor: float = 0.01,
        db_refresh_stride: int = 1,
    ):
        problems = []
        if not alpha > 0:
            problems.append("alpha must be positive (gain relation 0 < alpha << beta < 1)")
        if not beta < 1:
            problems.append("beta must be strictly below 1 (no open integrator pole)")
        if alpha > (1.0 - beta) * ratio_max:
            ratio = alpha / (1.0 - beta) if beta != 1.0 else math.inf
            problems.append(
                f"alpha/(1-beta) = {ratio:g} exceeds ratio_max "
                f"{ratio_max:g} (gain relation 0 < alpha << beta < 1)"
            )
        if db_refresh_stride < 1:
            problems.append("db_refresh_stride must be at least 1")
        if problems:
            raise ValidationError(problems)
        self.n = n
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.b_floor = float(b_floor)
        self.db_refresh_stride = int(db_refresh_stride)
        self.theta_D = np.zeros(2 * n)
        self._db_z = None  # complex per-block values of DB_hat
        self._steps_since_refresh = None
        self._E = None  # cached harmonic evaluation matrix
        self._E_key = None

    @property
    def residue_target(self) -> ResidueTarget:
        return ResidueTarget.from_gains(self.alpha, self.beta)

    def refresh_db(self, theta_B_hat, freqs, T: float) -> None:
        """Rebuild the cached numerator transform from the current estimate."""
        theta_B_hat = np.asarray(theta_B_hat, float)
        if self._E is None or self._E_key is not freqs or self._E.shape != (
            self.n,
            theta_B_hat.size,
        ):
            self._E = harmonic_eval_matrix(freqs, T, theta_B_hat.size)
            self._E_key = freqs
            if self._E.shape[0] != self.n:
                raise DimensionError(
                    f"expected {self.n} blocks, got {self._E.shape[0]}"
                )
        z = self._E @ theta_B_hat
        if float(np.min(np.abs(z))) < self.b_floor * (1.0 - 1e-12):
            raise ContractViolation(
                "numerator magnitude below b_floor reached the controller; "
                "the estimate projection upstream should have prevented this"
            )
        self._db_z = z
        self._steps_since_refresh = 0

    def maybe_refresh_db(self, theta_B_hat, freqs, T: float) -> None:
        if (
            self._db_z is None
            or self._steps_since_refresh >= self.db_refresh_stride - 1
        ):
            self.refresh_db(theta_B_hat, freqs, T)
        else:
            self._steps_since_refresh += 1

    def db_hat(self) -> BlockDiagTransform:
        """The cached transform as RotationBlocks."""
        if self._db_z is None:
            raise ContractViolation("numerator transform has not been built yet")
        return BlockDiagTransform(
            [RotationBlock(abs(z), math.atan2(z.imag, z.real)) for z in self._db_z]
        )

    def synthesis_step(self, theta_M_hat: np.ndarray) -> None:
        """theta_D^T <- beta theta_D^T - alpha theta_M^T DB_hat^-1, blockwise."""
        if self._db_z is None:
            raise ContractViolation("refresh_db must run before the first update")
        theta_M_hat = np.asarray(theta_M_hat, float)
        if theta_M_hat.size != 2 * self.n:
            raise DimensionError(
                f"theta_M length {theta_M_hat.size} does not match 2n={2 * self.n}"
            )
        backup = self.theta_D.copy()
        tm = theta_M_hat[0::2] + 1j * theta_M_hat[1::2]
        w = tm / self._db_z  # row-times-inverse-block as complex division
        td = self.theta_D
        td[0::2] = self.beta * td[0::2] - self.alpha * w.real
        td[1::2] = self.beta * td[1::2] - self.alpha * w.imag
        if not np.all(np.isfinite(td)):
            self.theta_D = backup
            raise NumericFault("synthesis update produced non-finite gains")

    def control_output(self, phi_R_k: np.ndarray) -> float:
        """u_A(k) = theta_D_hat^T phi_R(k)."""
        if phi_R_k.size != 2 * self.n:
            raise DimensionError(
                f"phi_R length {phi_R_k.size} does not match 2n={2 * self.n}"
            )
        return float(np.dot(self.theta_D, phi_R_k))


def feedforward_period(theta_D, dist: DisturbanceSpec) -> np.ndarray:
    """u_A over one fundamental period with frozen gains.

    Only defined for commensurate harmonics; the returned array replayed
    periodically is the pure feedforward sequence the converged controller
    would emit.
    """
    period = dist.fundamental_period_samples()
    if period is None:
        raise ValidationError(
            "feedforward period export needs commensurate harmonics"
        )
    theta_D = np.asarray(theta_D, float)
    out = np.empty(period)
    buf = np.empty(2 * dist.n)
    for k in range(period):
        out[k] = float(np.dot(theta_D, phi_R(dist, k, out=buf)))
    return out
