"""Polynomial, filter, frequency-response and stability-test behavior."""

import math

import numpy as np
import pytest
from numpy.polynomial import polynomial as npp

from afc.errors import FrequencyRangeError, NumericFault, ValidationError
from afc.lti import (
    Filter,
    Polynomial,
    TransferFunction,
    build_transform,
    freq_response,
    harmonic_eval_matrix,
    is_schur_stable,
    transfer_response,
)
from afc.verify import (
    check_block_structure,
    check_lemma1_equivalence,
    check_schur_oracle,
    random_stable_polynomial,
)


def fit_sinusoid(signal, omega, T, skip=0):
    """Least-squares amplitude/phase of a steady-state sinusoid (oracle)."""
    k = np.arange(len(signal))[skip:]
    y = np.asarray(signal)[skip:]
    basis = np.column_stack([np.sin(omega * k * T), np.cos(omega * k * T)])
    c_sin, c_cos = np.linalg.lstsq(basis, y, rcond=None)[0]
    return math.hypot(c_sin, c_cos), math.atan2(c_cos, c_sin)


class TestPolynomialAndTf:
    def test_polynomial_rejects_empty_and_nonfinite(self):
        with pytest.raises(ValidationError):
            Polynomial([])
        with pytest.raises(NumericFault):
            Polynomial([1.0, np.nan])

    def test_polynomial_multiply_matches_convolution(self):
        p = Polynomial([1.0, -0.5, 0.25]) * Polynomial([0.0, 2.0])
        assert np.allclose(p.coeffs, np.convolve([1, -0.5, 0.25], [0, 2]))

    def test_transfer_function_invariants(self):
        TransferFunction(A=[1.0, -0.5], B=[0.0, 1.0])
        with pytest.raises(ValidationError):
            TransferFunction(A=[2.0, -0.5], B=[0.0, 1.0])  # not monic
        with pytest.raises(ValidationError):
            TransferFunction(A=[1.0, -0.5], B=[0.5, 1.0])  # direct feedthrough
        with pytest.raises(ValidationError):
            TransferFunction(A=[1.0, -0.5, 0.1], B=[0.0, 1.0])  # degree mismatch


class TestFilter:
    def test_pure_delay(self):
        f = Filter([0.0, 1.0])
        assert [f.step(x) for x in (1.0, 0.0, 0.0)] == [0.0, 1.0, 0.0]

    def test_dc_gain_geometric_series_oracle(self):
        # y(k) for constant input is the partial geometric sum; limit 2.
        f = Filter([0.0, 1.0], [1.0, -0.5])
        expected = 0.0
        for k in range(60):
            y = f.step(1.0)
            expected = sum(0.5**j for j in range(k))  # oracle: direct sum
            assert y == pytest.approx(expected, abs=1e-12)
        assert y == pytest.approx(2.0, abs=1e-12)

    def test_zero_in_zero_out(self):
        f = Filter([0.0, 0.3, -0.2], [1.0, -0.9, 0.4])
        assert all(f.step(0.0) == 0.0 for _ in range(50))

    def test_nonfinite_input_rejected(self):
        f = Filter([0.0, 1.0])
        with pytest.raises(NumericFault):
            f.step(float("inf"))

    def test_divergent_state_rejected(self):
        f = Filter([1.0], [1.0, -4.0])  # wildly unstable pole
        with pytest.raises(NumericFault), np.errstate(over="ignore"):
            for _ in range(2000):
                f.step(1e300)

    def test_reset(self):
        f = Filter([0.0, 1.0], [1.0, -0.5])
        f.step(1.0)
        f.reset()
        assert f.step(0.0) == 0.0


class TestFreqResponse:
    def test_constant_polynomial_identity(self):
        fp = freq_response(Polynomial([1.0]), 1.3, 1.0)
        assert fp.magnitude == 1.0 and fp.phase == 0.0

    def test_direct_complex_oracle(self):
        # p = 1 - 0.5 q^-1 at wT = pi/2: 1 - 0.5*(-j) = 1 + 0.5j
        fp = freq_response(Polynomial([1.0, -0.5]), math.pi / 2, 1.0)
        assert fp.magnitude == pytest.approx(math.sqrt(1.25), rel=1e-14)
        assert fp.phase == pytest.approx(math.atan2(0.5, 1.0), rel=1e-14)

    def test_delay_phase_matches_steady_state_simulation(self):
        # Drive sin(0.3 k) through a one-sample delay and fit the result.
        omega, T = 0.3, 1.0
        f = Filter([0.0, 1.0])
        y = [f.step(math.sin(omega * k * T)) for k in range(400)]
        amp, phase = fit_sinusoid(y, omega, T, skip=2)
        fp = freq_response(Polynomial([0.0, 1.0]), omega, T)
        assert fp.magnitude == pytest.approx(amp, abs=1e-9)
        assert fp.phase == pytest.approx(phase, abs=1e-9)
        assert fp.phase == pytest.approx(-0.3, abs=1e-12)

    def test_out_of_range_rejected(self):
        p = Polynomial([1.0])
        for bad in (0.0, -0.5, math.pi, 4.0):
            with pytest.raises(FrequencyRangeError):
                freq_response(p, bad, 1.0)

    def test_transfer_response_matches_ratio(self):
        tf = TransferFunction(A=[1.0, -0.4, 0.1], B=[0.0, 0.7, -0.2])
        omega, T = 0.8, 1.0
        num = complex(tf.B(np.exp(-1j * omega * T)))
        den = complex(tf.A(np.exp(-1j * omega * T)))
        fp = transfer_response(tf, omega, T)
        assert fp.magnitude == pytest.approx(abs(num / den), rel=1e-13)
        assert fp.phase == pytest.approx(np.angle(num / den), abs=1e-13)


class TestBuildTransform:
    def test_identity_polynomial_gives_identity_blocks(self):
        d = build_transform(Polynomial([1.0]), [0.3, 0.9], 1.0)
        for block in d.blocks:
            assert np.allclose(block.as_matrix(), np.eye(2))

    def test_delay_block_matches_delayed_sinusoid(self):
        # theta^T D phi_R must equal the one-sample-delayed combination.
        omega, T = 0.3, 1.0
        d = build_transform(Polynomial([0.0, 1.0]), [omega], T)
        theta = np.array([0.7, -0.4])
        theta_l = d.apply_transpose(theta)
        ks = np.arange(3, 300)
        direct = theta[0] * np.sin(omega * (ks - 1)) + theta[1] * np.cos(
            omega * (ks - 1)
        )
        via_blocks = theta_l[0] * np.sin(omega * ks) + theta_l[1] * np.cos(omega * ks)
        assert np.max(np.abs(direct - via_blocks)) < 1e-12

    def test_product_polynomial_is_blockwise_product(self):
        rng = np.random.default_rng(7)
        p1 = Polynomial(rng.standard_normal(4))
        p2 = Polynomial(rng.standard_normal(3))
        freqs = [0.4, 1.1, 2.0]
        d1 = build_transform(p1, freqs, 1.0)
        d2 = build_transform(p2, freqs, 1.0)
        d12 = build_transform(p1 * p2, freqs, 1.0)
        for b1, b2, b12 in zip(d1.blocks, d2.blocks, d12.blocks):
            # oracle: scaled rotations compose like complex multiplication
            assert b12.as_complex() == pytest.approx(
                b1.as_complex() * b2.as_complex(), rel=1e-12, abs=1e-14
            )
            assert np.allclose(
                b12.as_matrix(), b1.as_matrix() @ b2.as_matrix(), atol=1e-12
            )

    def test_duplicate_and_out_of_range_frequencies_rejected(self):
        with pytest.raises(ValidationError):
            build_transform(Polynomial([1.0]), [0.5, 0.5], 1.0)
        with pytest.raises(ValidationError):
            build_transform(Polynomial([1.0]), [0.5, 4.0], 1.0)

    def test_apply_matches_dense_matrix(self):
        rng = np.random.default_rng(3)
        d = build_transform(Polynomial(rng.standard_normal(5)), [0.3, 0.8, 1.9], 1.0)
        m = d.as_matrix()
        v = rng.standard_normal(6)
        assert np.allclose(d.apply(v), m @ v, atol=1e-13)
        assert np.allclose(d.apply_transpose(v), m.T @ v, atol=1e-13)

    def test_block_structure_invariant(self):
        passed, worst, _ = check_block_structure(2024)
        assert passed, f"block structure defect {worst}"

    def test_harmonic_eval_matrix_matches_polynomial_evaluation(self):
        rng = np.random.default_rng(5)
        b = rng.standard_normal(5)
        freqs = np.array([0.2, 0.9, 1.7])
        vals = harmonic_eval_matrix(freqs, 1.0, 5) @ b
        p = Polynomial(np.concatenate(([0.0], b)))
        for w, v in zip(freqs, vals):
            assert complex(p(np.exp(-1j * w))) == pytest.approx(v, rel=1e-13)


class TestSchurStability:
    def test_no_lag_polynomial_is_stable(self):
        assert is_schur_stable([1.0])

    def test_known_roots(self):
        assert is_schur_stable([1.0, -0.5])  # root q = 2
        assert not is_schur_stable([1.0, -1.5])  # root q = 2/3

    def test_margin_strictness(self):
        # root exactly on the unit circle fails the strict test
        assert not is_schur_stable([1.0, -1.0])
        assert not is_schur_stable([1.0, -1.0 / (1.0 + 1e-10)], margin=1e-9)
        assert is_schur_stable([1.0, -1.0 / (1.0 + 1e-8)], margin=1e-9)

    def test_non_monic_rejected(self):
        with pytest.raises(ValidationError):
            is_schur_stable([2.0, 1.0])

    def test_agrees_with_root_oracle_on_1000_random_polynomials(self):
        passed, disagreements, detail = check_schur_oracle(1234, trials=1000)
        assert passed, detail


class TestLemma1Equivalence:
    def test_steady_state_equivalence_property(self):
        passed, worst, detail = check_lemma1_equivalence(99, trials=12)
        assert passed, detail

    def test_random_stable_polynomial_really_is_stable(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            p = random_stable_polynomial(rng, int(rng.integers(1, 9)))
            roots = npp.polyroots(p.coeffs[::-1])
            assert np.all(np.abs(roots) < 1.0)
