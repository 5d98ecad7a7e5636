"""Runnable property suites: the invariants behind the library's math.

Each check returns (passed, measured, detail). The CLI `verify` subcommand
runs a named suite with fresh random seeds and prints one line per
property; the test suite calls the same functions at pinned seeds and
tolerances.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.polynomial import polynomial as npp

from .adaptation import (
    Estimator,
    GainSchedule,
    ProjectionConfig,
    a_polynomial,
    project_A,
    project_B,
)
from .config import ExperimentConfig, config_from_dict
from .errors import NumericFault
from .excitation import (
    ExcitationSpec,
    PrbsSequence,
    excitation_direct,
    excitation_fast,
    pe_order,
)
from .lti import (
    Filter,
    Polynomial,
    build_transform,
    harmonic_eval_matrix,
    is_schur_stable,
)
from .regressor import DisturbanceSpec, RegressorBank, phi_R
from .simulator import (
    PlantSim,
    PlantTruth,
    ground_truth_theta_R,
    random_plant,
    run_experiment,
)
from .synthesis import Controller


def random_stable_polynomial(rng, degree: int, modulus=(0.1, 0.9)) -> Polynomial:
    """Monic polynomial in q^-1 whose reciprocal roots lie inside the disc."""
    roots = []
    remaining = degree
    while remaining >= 2 and rng.uniform() < 0.7:
        r = rng.uniform(*modulus)
        ang = rng.uniform(0.1, math.pi - 0.1)
        roots.extend([r * np.exp(1j * ang), r * np.exp(-1j * ang)])
        remaining -= 2
    while remaining > 0:
        roots.append(rng.uniform(*modulus) * (1 if rng.uniform() < 0.5 else -1))
        remaining -= 1
    return Polynomial(npp.polyfromroots(roots).real[::-1])


def random_disturbance(rng, n: int, T: float = 1.0) -> DisturbanceSpec:
    omegas = np.sort(rng.uniform(0.1, 2.8 / T, size=n))
    while np.min(np.diff(omegas), initial=np.inf) < 0.05:
        omegas = np.sort(rng.uniform(0.1, 2.8 / T, size=n))
    return DisturbanceSpec(
        omegas=omegas, amps=np.ones(n), phases=np.zeros(n), T=T
    )


# ---------------------------------------------------------------------------
# lemma1: steady-state equivalence of filtering and the block transform
# ---------------------------------------------------------------------------


def check_lemma1_equivalence(seed: int, trials: int = 50, max_degree: int = 8):
    """Filtered theta^T phi_R vs theta^T D_L phi_R after the transient."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        degree = int(rng.integers(1, max_degree + 1))
        p = random_stable_polynomial(rng, degree)
        n = int(rng.integers(1, 5))
        dist = random_disturbance(rng, n)
        theta = rng.standard_normal(2 * n)
        roots = npp.polyroots(p.coeffs[::-1])
        rho_max = float(np.max(np.abs(roots))) if roots.size else 0.0
        transient = max(degree, int(math.ceil(10.0 / (1.0 - rho_max))))
        horizon = transient + 2000

        filt = Filter(p.coeffs)
        d_l = build_transform(p, dist.omegas, dist.T)
        theta_l = d_l.apply_transpose(theta)
        filtered = np.empty(horizon)
        direct = np.empty(horizon)
        for k in range(horizon):
            pr = phi_R(dist, k)
            filtered[k] = filt.step(float(np.dot(theta, pr)))
            direct[k] = float(np.dot(theta_l, pr))
        gap = filtered[transient:] - direct[transient:]
        rms_sig = float(np.sqrt(np.mean(direct[transient:] ** 2)))
        ratio = float(np.sqrt(np.mean(gap**2))) / max(rms_sig, 1e-30)
        worst = max(worst, ratio)
    return worst <= 1e-6, worst, f"worst relative RMS gap {worst:.3e} (limit 1e-6)"


def check_block_structure(seed: int, trials: int = 200):
    """Every transform block has equal diagonal and antisymmetric off-diagonal."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        p = random_stable_polynomial(rng, int(rng.integers(1, 7)))
        dist = random_disturbance(rng, int(rng.integers(1, 5)))
        for block in build_transform(p, dist.omegas, dist.T).blocks:
            m = block.as_matrix()
            worst = max(worst, abs(m[0, 0] - m[1, 1]), abs(m[0, 1] + m[1, 0]))
    return worst <= 1e-12, worst, f"worst structure defect {worst:.3e} (limit 1e-12)"


def check_schur_oracle(seed: int, trials: int = 1000, max_degree: int = 6):
    """Schur-Cohn recursion against the root-finding oracle."""
    rng = np.random.default_rng(seed)
    disagreements = 0
    for _ in range(trials):
        n = int(rng.integers(1, max_degree + 1))
        a = np.concatenate(([1.0], rng.uniform(-1.6, 1.6, n)))
        roots = npp.polyroots(a)
        margin_pos = np.min(np.abs(roots)) - (1.0 + 1e-9)
        if abs(margin_pos) < 1e-7:
            continue  # too close to the decision boundary for a float oracle
        if is_schur_stable(a) != bool(margin_pos > 0):
            disagreements += 1
    return disagreements == 0, disagreements, f"{disagreements} oracle disagreements"


# ---------------------------------------------------------------------------
# excitation: fast form identity and amplitude bound
# ---------------------------------------------------------------------------


def check_excitation_identity(seed: int, specs: int = 20, steps: int = 10**4):
    """max |fast - direct| over random excitation specs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    ks = np.arange(steps)
    for _ in range(specs):
        n = int(rng.integers(1, 6))
        fs = rng.uniform(20000.0, 50000.0)
        T = 1.0 / fs
        # Harmonic band well below Nyquist, as in the servo experiments.
        freqs = np.sort(rng.uniform(0.001, 0.012, n)) * fs
        dist = DisturbanceSpec(
            omegas=2 * math.pi * freqs, amps=np.ones(n), phases=np.zeros(n), T=T
        )
        n_deltas = int(rng.integers(1, 3))
        deltas = tuple(
            float(d) for d in rng.uniform(0.01, 0.05, n_deltas) * dist.omegas[0]
        )
        spec = ExcitationSpec(
            mode="shaped", amplitude=float(rng.uniform(0.0, 1.5)), deltas=deltas
        )
        direct = excitation_direct(spec, dist, ks)
        phi = np.empty((steps, 2 * n))
        ph = np.outer(ks * T, dist.omegas)
        phi[:, 0::2] = np.sin(ph)
        phi[:, 1::2] = np.cos(ph)
        fast = excitation_fast(spec, phi, ks, T)
        worst = max(worst, float(np.max(np.abs(direct - fast))))
    return worst <= 1e-12, worst, f"max |fast-direct| {worst:.3e} (limit 1e-12)"


def check_excitation_bound(seed: int, specs: int = 10, steps: int = 2000):
    """|u(k)| <= n * gain(k) for the single-shift shaped signal."""
    rng = np.random.default_rng(seed)
    ok = True
    worst = 0.0
    for _ in range(specs):
        n = int(rng.integers(1, 6))
        dist = random_disturbance(rng, n, T=1.0 / rng.uniform(1000.0, 50000.0))
        spec = ExcitationSpec(
            mode="shaped",
            amplitude=float(rng.uniform(0.1, 2.0)),
            deltas=(0.02 * float(dist.omegas[0]),),
        )
        u = excitation_direct(spec, dist, np.arange(steps))
        margin = float(np.max(np.abs(u))) - n * spec.amplitude
        worst = max(worst, margin)
        ok = ok and margin <= 1e-9
    return ok, worst, f"worst |u| excess over n*gain: {worst:.3e}"


# ---------------------------------------------------------------------------
# pe: persistency-of-excitation orders
# ---------------------------------------------------------------------------


def check_pe_orders(seed: int):
    """Single sinusoid has order exactly 2; the shaped signal reaches 2n."""
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.2, 0.4)
    s = np.sin(w * np.arange(4000))
    ok2, lam2 = pe_order(s, 2, tol=1e-8)
    ok3, lam3 = pe_order(s, 3, tol=1e-8)
    n = 3
    dist = DisturbanceSpec(
        omegas=np.array([0.3, 0.8, 1.3]), amps=np.ones(n), phases=np.zeros(n), T=1.0
    )
    spec = ExcitationSpec(mode="shaped", amplitude=1.0, deltas=(0.02 * 0.3,))
    u = excitation_direct(spec, dist, np.arange(60000))
    ok6, lam6 = pe_order(u, 2 * n, tol=1e-10)
    passed = ok2 and not ok3 and ok6
    detail = (
        f"sine order2 eig {lam2:.3e} (pass), order3 eig {lam3:.3e} (fail), "
        f"shaped n=3 order6 eig {lam6:.3e} (pass)"
    )
    return passed, (lam2, lam3, lam6), detail


def check_pe_monotone(seed: int):
    """PE at order m implies PE at every lower order (same tolerance)."""
    rng = np.random.default_rng(seed)
    ok = True
    for _ in range(10):
        s = rng.standard_normal(4000)
        tol = 1e-6
        passed_orders = [pe_order(s, m, tol)[0] for m in range(1, 9)]
        highest = max((i for i, p in enumerate(passed_orders) if p), default=-1)
        ok = ok and all(passed_orders[: highest + 1])
    return ok, None, "order-m pass implies pass at all lower orders"


def check_prbs(seed: int):
    """Reproducibility and near-delta autocorrelation of the PRBS."""
    n = 2**16
    s1 = PrbsSequence(seed or 1, 1.0).take(n)
    s2 = PrbsSequence(seed or 1, 1.0).take(n)
    identical = bool(np.array_equal(s1, s2))
    lag0 = float(np.mean(s1 * s1))
    off = max(
        abs(float(np.dot(s1[lag:], s1[:-lag]) / (n - lag))) for lag in range(1, 33)
    )
    passed = identical and lag0 == 1.0 and off < 0.05
    return passed, off, f"identical={identical}, lag0={lag0}, max off-lag {off:.4f}"


# ---------------------------------------------------------------------------
# projections: adversarial safety run
# ---------------------------------------------------------------------------


def check_projection_units(seed: int):
    """Direct adversarial inputs to both projections."""
    rng = np.random.default_rng(seed)
    cfg = ProjectionConfig(b_floor=0.1, shrink_rho=0.6)
    ok = True
    for _ in range(200):
        theta = rng.standard_normal(5) * rng.uniform(0.1, 50.0)
        out, _ = project_A(theta, cfg)
        ok = ok and is_schur_stable(a_polynomial(out), cfg.schur_margin)
    freqs = np.array([0.3, 0.9, 1.7])
    for _ in range(200):
        theta = rng.standard_normal(4) * 10.0 ** rng.uniform(-8, 2)
        out, _ = project_B(theta, freqs, 1.0, cfg)
        mags = np.abs(harmonic_eval_matrix(freqs, 1.0, 4) @ out)
        ok = ok and bool(np.min(mags) >= cfg.b_floor * (1 - 1e-12))
    zero_out, fired = project_B(np.zeros(4), freqs, 1.0, cfg)
    ok = ok and fired and zero_out[0] > 0
    return ok, None, "projected outputs always satisfy their invariants"


def check_projection_run(seed: int, steps: int = 10**5):
    """Hostile closed loop: invariants must hold after every step.

    Aggressive persistent gains, heavy noise, weak excitation and a large
    disturbance push the raw updates far outside the safe sets; the
    projections have to contain them without a single violation or fault.
    """
    rng = np.random.default_rng(seed)
    T = 1.0 / 8000.0
    n = 3
    dist = DisturbanceSpec(
        omegas=2 * math.pi * np.array([50.0, 125.0, 300.0]),
        amps=np.array([3.0, 2.0, 4.0]),
        phases=rng.uniform(-math.pi, math.pi, n),
        T=T,
    )
    tf = random_plant(4, dist.omegas, T, rng, modulus_range=(0.5, 0.95), min_b_mag=0.05)
    truth = PlantTruth(
        tf=tf, theta_R_bar=dist.theta(), noise_sigma=2.0, seed=int(seed)
    )
    nominal = np.abs(harmonic_eval_matrix(dist.omegas, T, 4) @ tf.B.coeffs[1:])
    proj = ProjectionConfig(
        b_floor=0.05,
        shrink_rho=0.8,
        b_ceil_ratio=2.0,
        nominal_b_mags=tuple(float(v) for v in nominal),
    )
    est = Estimator(
        n_A=4,
        freqs=dist.omegas,
        T=T,
        gamma1=GainSchedule(0.5, 0.3, 0.2),
        gamma2=GainSchedule(0.5, 0.3, 0.2),
        projection=proj,
    )
    ctrl = Controller(n=n, alpha=0.002, beta=0.95, ratio_max=1000.0, b_floor=0.05)
    bank = RegressorBank(4)
    sim = PlantSim(truth, dist)
    noise = sim.draw_noise(steps)
    buf = np.empty(2 * n)
    spec = ExcitationSpec(mode="shaped", amplitude=0.05, deltas=(0.02 * dist.omegas[0],))
    violations = 0
    ceil = proj.b_ceil()
    for k in range(steps):
        pr = phi_R(dist, k, out=buf)
        u = excitation_fast(spec, pr, k, T)
        u_a = ctrl.control_output(pr)
        try:
            e_k = sim.step(u, u_a, k, w_k=noise[k], phi_R_k=pr)
            est.step(bank, pr, e_k)
            ctrl.maybe_refresh_db(est.theta_B, dist.omegas, T)
            ctrl.synthesis_step(est.theta_M)
        except NumericFault:
            violations += 1
            break
        mags = est.b_hat_magnitudes()
        if not is_schur_stable(a_polynomial(est.theta_A), proj.schur_margin):
            violations += 1
        if float(np.min(mags)) < proj.b_floor * (1 - 1e-12):
            violations += 1
        if not est.f > 0:
            violations += 1
        bank.push(e_k, u, u_a)
    fires = est.proj_A_count + est.proj_B_count
    passed = violations == 0 and fires > 0
    return (
        passed,
        violations,
        f"{violations} invariant violations in {steps} steps "
        f"({est.proj_A_count}+{est.proj_B_count} projection fires)",
    )


# ---------------------------------------------------------------------------
# equilibrium: numerical stationary point of the adaptation law
# ---------------------------------------------------------------------------


def check_stationary_point(seed: int, settle: int = 4000):
    """At the theoretical equilibrium the period-averaged update vanishes.

    True plant coefficients, theta_M at its residue limit and the
    feedforward gains at their fixed point: the a-priori error is
    identically zero, so the period-averaged update direction must be
    numerically negligible against ||theta_R||.
    """
    rng = np.random.default_rng(seed)
    T = 1.0 / 41760.0
    n = 4
    dist = DisturbanceSpec(
        omegas=2 * math.pi * 120.0 * np.arange(1, n + 1),
        amps=np.array([1.0, 0.8, 0.6, 0.5]),
        phases=rng.uniform(-math.pi, math.pi, n),
        T=T,
    )
    tf = random_plant(5, dist.omegas, T, rng)
    truth = PlantTruth(tf=tf, theta_R_bar=dist.theta(), noise_sigma=0.0, seed=3)
    alpha, beta = 4e-5, 1.0 - 2e-7
    theta_R = ground_truth_theta_R(truth, dist.omegas, dist.T)
    factor = (1.0 - beta) / (1.0 - beta + alpha)
    theta_M_star = factor * theta_R

    d_b = build_transform(tf.B, dist.omegas, T)
    z = np.array([b.as_complex() for b in d_b.blocks])
    tm_c = theta_M_star[0::2] + 1j * theta_M_star[1::2]
    td_c = -(alpha / (1.0 - beta)) * (tm_c / z)
    theta_D = np.empty(2 * n)
    theta_D[0::2] = td_c.real
    theta_D[1::2] = td_c.imag

    theta_plant = np.concatenate((-tf.A.coeffs[1:], tf.B.coeffs[1:]))
    spec = ExcitationSpec(mode="shaped", amplitude=1.0, deltas=(0.025 * dist.omegas[0],))
    sim = PlantSim(truth, dist)
    bank = RegressorBank(5)
    buf = np.empty(2 * n)
    gram = np.zeros((10, 10))
    gram_count = 0
    period = dist.fundamental_period_samples()
    direction_sum = np.zeros(10 + 2 * n)
    for k in range(settle + period):
        pr = phi_R(dist, k, out=buf)
        u = excitation_fast(spec, pr, k, T)
        u_a = float(np.dot(theta_D, pr))
        e_k = sim.step(u, u_a, k, w_k=0.0, phi_R_k=pr)
        if k >= settle - 1000:
            gram += np.outer(bank.psi, bank.psi)
            gram_count += 1
        if k >= settle:
            y_hat = float(
                np.dot(theta_plant, bank.psi) + np.dot(theta_M_star, pr)
            )
            eps0 = e_k - y_hat
            F = gram / gram_count + 1e-9 * np.eye(10)
            direction_sum[:10] += np.linalg.solve(F, bank.psi) * eps0
            direction_sum[10:] += pr * (eps0 / n)
        bank.push(e_k, u, u_a)
    mean_norm = float(np.linalg.norm(direction_sum / period))
    norm_r = float(np.linalg.norm(theta_R))
    ratio = mean_norm / norm_r
    return ratio <= 1e-6, ratio, f"mean update norm / ||theta_R|| = {ratio:.3e} (limit 1e-6)"


# ---------------------------------------------------------------------------
# residue: converged closed-loop attenuation and residue law
# ---------------------------------------------------------------------------


def residue_experiment_config(seed: int, steps: int = 500000) -> ExperimentConfig:
    """Reference configuration for the converged residue-law experiment:
    4 harmonics of 120 Hz at 41.76 kHz with the reference gain pair."""
    freeze_at = max(steps - 100 * 348, 0)
    return config_from_dict(
        {
            "plant": {"mode": "random", "order": 5, "seed": 42, "noise_sigma": 0.0},
            "disturbance": {
                "sample_rate_hz": 41760.0,
                "harmonics": [
                    [120.0, 1.0, 0.4],
                    [240.0, 0.8, -1.0],
                    [360.0, 0.6, 2.2],
                    [480.0, 0.5, 0.9],
                ],
            },
            "excitation": {"mode": "prbs", "amplitude": 3.0, "prbs_seed": 99},
            "adaptation": {
                "n_a": 5,
                "gamma2": {"c": 1.0, "p": 0.75, "floor": 1e-3},
            },
            "synthesis": {"alpha": 4e-5, "beta": 1.0 - 2e-7},
            "run": {
                "steps": steps,
                "seed": seed,
                "decimate": 500,
                "settle": 2000,
                "spectrum_window": 13920,
                "freeze_at": freeze_at,
            },
        }
    )


def check_residue_law(seed: int, steps: int = 500000):
    """Converged run: residue ratio in [0.5, 2]x target and >= 40 dB attenuation."""
    cfg = residue_experiment_config(seed, steps)
    trace = run_experiment(cfg)
    s = trace.summary
    ratio = s["theta_M_residue_ratio"] / s["residue_target"]
    atten_ok = all(a <= -40.0 for a in s["attenuation_db"])
    passed = 0.5 <= ratio <= 2.0 and atten_ok
    detail = (
        f"residue ratio {ratio:.3f}x target, attenuation "
        f"{[round(a, 1) for a in s['attenuation_db']]} dB"
    )
    return passed, (ratio, s["attenuation_db"]), detail


SUITES = {
    "lemma1": [
        ("steady-state equivalence", check_lemma1_equivalence),
        ("rotation block structure", check_block_structure),
        ("stability test vs root oracle", check_schur_oracle),
    ],
    "excitation": [
        ("fast form identity", check_excitation_identity),
        ("amplitude bound", check_excitation_bound),
    ],
    "pe": [
        ("sinusoid and shaped-signal orders", check_pe_orders),
        ("order monotonicity", check_pe_monotone),
        ("prbs reproducibility and autocorrelation", check_prbs),
    ],
    "projections": [
        ("unit-level adversarial projections", check_projection_units),
        ("hostile closed-loop invariants", check_projection_run),
    ],
    "equilibrium": [
        ("stationary point of the adaptation law", check_stationary_point),
    ],
    "residue": [
        ("residue law and attenuation", check_residue_law),
    ],
}


def run_suite(name: str, seed: int):
    """Run one named suite; returns [(property, passed, detail), ...]."""
    if name not in SUITES:
        raise KeyError(name)
    results = []
    for prop_name, fn in SUITES[name]:
        passed, _, detail = fn(seed)
        results.append((prop_name, passed, detail))
    return results
