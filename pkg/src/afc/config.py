"""Experiment configuration: TOML parsing, validation, runtime builders.

The config file is a flat key-value tree with one section per subsystem
(plant, disturbance, excitation, adaptation, synthesis, run) so experiment
provenance diffs cleanly. Loading validates every cross-field constraint
and reports the complete list of violations, each naming the constraint it
enforces; out-of-range values are never silently coerced.

See docs/config-schema.md for the full key reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .adaptation import Estimator, GainSchedule, ProjectionConfig
from .errors import ValidationError
from .excitation import ExcitationSpec, default_delta, validate_excitation
from .lti import TransferFunction, is_schur_stable
from .regressor import DisturbanceSpec, packed_theta
from .synthesis import Controller

_TWO_PI = 2.0 * math.pi


@dataclass
class PlantConfig:
    mode: str = "random"
    order: int = 5
    seed: int = 0
    root_modulus: list = field(default_factory=lambda: [0.3, 0.9])
    min_b_mag: float = 0.1
    a: list | None = None
    b: list | None = None
    noise_sigma: float = 0.0


@dataclass
class DisturbanceConfig:
    sample_rate_hz: float = 41760.0
    harmonics: list = field(default_factory=list)  # rows [freq_hz, amp, phase_rad]
    theta_R_bar: list | None = None


@dataclass
class ExcitationConfig:
    mode: str = "shaped"
    amplitude: float = 1.0
    delta_u_hz: float | None = None  # default: 2% of the lowest frequency
    extra_delta_u_hz: list = field(default_factory=list)
    decay: float = 1.0
    floor: float = 0.0
    prbs_seed: int = 1


@dataclass
class GammaConfig:
    c: float = 1.0
    p: float = 1.0
    floor: float = 0.0


@dataclass
class AdaptationConfig:
    n_a: int = 5
    gamma1: GammaConfig = field(default_factory=lambda: GammaConfig(1.0, 1.0, 0.0))
    gamma2: GammaConfig = field(default_factory=lambda: GammaConfig(1.0, 0.75, 0.0))
    b_floor: float = 0.01
    b_ceil_ratio: float = 0.0
    nominal_b_mags: list = field(default_factory=list)
    schur_margin: float = 1e-9
    shrink_rho: float = 0.9
    f0: float = 1.0
    reg_eps: float = 1e-8


@dataclass
class SynthesisConfig:
    alpha: float = 4e-5
    beta: float = 1.0 - 2e-7
    ratio_max: float = 1000.0
    db_refresh_stride: int = 1


@dataclass
class RunConfig:
    steps: int = 100000
    seed: int = 1
    freeze_at: int | None = None
    decimate: int = 1
    settle: int = 2000
    spectrum_window: int = 0


_SECTION_TYPES = {
    "plant": PlantConfig,
    "disturbance": DisturbanceConfig,
    "excitation": ExcitationConfig,
    "adaptation": AdaptationConfig,
    "synthesis": SynthesisConfig,
    "run": RunConfig,
}


@dataclass
class ExperimentConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    disturbance: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    excitation: ExcitationConfig = field(default_factory=ExcitationConfig)
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    run: RunConfig = field(default_factory=RunConfig)

    # ---- runtime builders -------------------------------------------------

    def make_disturbance(self) -> DisturbanceSpec:
        return DisturbanceSpec.from_harmonics(
            self.disturbance.harmonics, self.disturbance.sample_rate_hz
        )

    def theta_R_bar(self, dist: DisturbanceSpec) -> np.ndarray:
        if self.disturbance.theta_R_bar is not None:
            return np.asarray(self.disturbance.theta_R_bar, float)
        return packed_theta(dist.amps, dist.phases)

    def make_excitation(self, dist: DisturbanceSpec) -> ExcitationSpec:
        e = self.excitation
        if e.mode == "prbs":
            deltas = ()
        else:
            first = (
                _TWO_PI * e.delta_u_hz
                if e.delta_u_hz is not None
                else default_delta(dist)
            )
            deltas = (first, *(_TWO_PI * d for d in e.extra_delta_u_hz))
        return ExcitationSpec(
            mode=e.mode,
            amplitude=e.amplitude,
            deltas=deltas,
            decay=e.decay,
            floor=e.floor,
            prbs_seed=e.prbs_seed,
        )

    def make_projection(self) -> ProjectionConfig:
        a = self.adaptation
        return ProjectionConfig(
            b_floor=a.b_floor,
            b_ceil_ratio=a.b_ceil_ratio,
            nominal_b_mags=tuple(a.nominal_b_mags),
            schur_margin=a.schur_margin,
            shrink_rho=a.shrink_rho,
        )

    def make_estimator(self, dist: DisturbanceSpec) -> Estimator:
        a = self.adaptation
        return Estimator(
            n_A=a.n_a,
            freqs=dist.omegas,
            T=dist.T,
            gamma1=GainSchedule(a.gamma1.c, a.gamma1.p, a.gamma1.floor),
            gamma2=GainSchedule(a.gamma2.c, a.gamma2.p, a.gamma2.floor),
            projection=self.make_projection(),
            f0=a.f0,
            reg_eps=a.reg_eps,
        )

    def make_controller(self, dist: DisturbanceSpec) -> Controller:
        s = self.synthesis
        return Controller(
            n=dist.n,
            alpha=s.alpha,
            beta=s.beta,
            ratio_max=s.ratio_max,
            b_floor=self.adaptation.b_floor,
            db_refresh_stride=s.db_refresh_stride,
        )

    # ---- validation -------------------------------------------------------

    def validate(self) -> list:
        """All violated constraints (empty when the config is usable)."""
        problems = []
        dist = None

        try:
            dist = self.make_disturbance()
        except (ValidationError, ValueError, TypeError, ZeroDivisionError) as exc:
            problems.append(f"disturbance: {exc}")

        p = self.plant
        if p.mode not in ("random", "explicit"):
            problems.append(f"plant: unknown mode {p.mode!r}")
        elif p.mode == "explicit":
            if p.a is None or p.b is None:
                problems.append("plant: explicit mode needs both 'a' and 'b'")
            else:
                try:
                    tf = TransferFunction(A=p.a, B=p.b)
                    if not is_schur_stable(tf.A):
                        problems.append(
                            "plant: configured denominator must be Schur-stable "
                            "(the loop being augmented is assumed stable)"
                        )
                except ValidationError as exc:
                    problems.append(f"plant: {exc}")
        else:
            if p.order < 1:
                problems.append("plant: order must be at least 1")
            lo, hi = (list(p.root_modulus) + [0, 0])[:2]
            if not (0.0 <= lo < hi < 1.0):
                problems.append(
                    "plant: root_modulus must satisfy 0 <= lo < hi < 1 "
                    "(guarantees a Schur-stable draw)"
                )
            if p.min_b_mag <= 0:
                problems.append("plant: min_b_mag must be positive")
        if p.noise_sigma < 0:
            problems.append("plant: noise_sigma must be non-negative")

        if dist is not None:
            if self.disturbance.theta_R_bar is not None and len(
                self.disturbance.theta_R_bar
            ) != 2 * dist.n:
                problems.append(
                    f"disturbance: theta_R_bar must have length {2 * dist.n} "
                    "(one sin/cos pair per harmonic)"
                )
            try:
                exc_spec = self.make_excitation(dist)
                problems += [
                    f"excitation: {v}"
                    for v in validate_excitation(exc_spec, dist, self.adaptation.n_a)
                ]
            except ValidationError as exc:
                problems.append(f"excitation: {exc}")

        a = self.adaptation
        if a.n_a < 1:
            problems.append("adaptation: n_a must be at least 1")
        for name, g in (("gamma1", a.gamma1), ("gamma2", a.gamma2)):
            try:
                GainSchedule(g.c, g.p, g.floor)
            except ValidationError as exc:
                problems.append(f"adaptation.{name}: {exc}")
        try:
            proj = self.make_projection()
            if proj.b_ceil() is not None and len(a.nominal_b_mags) != (
                dist.n if dist is not None else len(a.nominal_b_mags)
            ):
                problems.append(
                    "adaptation: nominal_b_mags must list one magnitude per harmonic"
                )
        except ValidationError as exc:
            problems.append(f"adaptation: {exc}")
        if a.f0 <= 0:
            problems.append("adaptation: f0 must be positive")
        if a.reg_eps <= 0:
            problems.append("adaptation: reg_eps must be positive")

        s = self.synthesis
        if not s.alpha < s.beta:
            problems.append(
                "synthesis: alpha must be smaller than beta "
                "(gain relation 0 < alpha << beta < 1)"
            )
        try:
            Controller(
                n=dist.n if dist is not None else 1,
                alpha=s.alpha,
                beta=s.beta,
                ratio_max=s.ratio_max,
                b_floor=a.b_floor,
                db_refresh_stride=s.db_refresh_stride,
            )
        except ValidationError as exc:
            problems.append(f"synthesis: {exc}")

        r = self.run
        if r.steps < 0:
            problems.append("run: steps must be non-negative")
        if r.decimate < 1:
            problems.append("run: decimate must be at least 1")
        if r.settle < 0:
            problems.append("run: settle must be non-negative")
        if r.freeze_at is not None and not 0 <= r.freeze_at <= r.steps:
            problems.append("run: freeze_at must lie inside [0, steps]")
        if r.spectrum_window < 0:
            problems.append("run: spectrum_window must be non-negative")
        elif r.spectrum_window > 0 and dist is not None:
            period = dist.fundamental_period_samples()
            if period is None:
                problems.append(
                    "run: spectrum_window needs commensurate harmonics "
                    "(integer-period analysis windows)"
                )
            elif r.spectrum_window % period:
                problems.append(
                    f"run: spectrum_window must be a multiple of the fundamental "
                    f"period ({period} samples)"
                )
        return problems


def _coerce_section(name: str, data: dict):
    cls = _SECTION_TYPES[name]
    fields = {f.name for f in cls.__dataclass_fields__.values()}
    unknown = set(data) - fields
    if unknown:
        raise ValidationError(
            [f"{name}: unknown key(s) {sorted(unknown)}"]
        )
    kwargs = dict(data)
    if name == "adaptation":
        for g in ("gamma1", "gamma2"):
            if g in kwargs and isinstance(kwargs[g], dict):
                extra = set(kwargs[g]) - {"c", "p", "floor"}
                if extra:
                    raise ValidationError(
                        [f"adaptation.{g}: unknown key(s) {sorted(extra)}"]
                    )
                kwargs[g] = GammaConfig(**kwargs[g])
    if name == "run" and kwargs.get("freeze_at", None) in (-1, None):
        kwargs["freeze_at"] = None
    return cls(**kwargs)


def config_from_dict(tree: dict) -> ExperimentConfig:
    """Build and validate an ExperimentConfig from a parsed key-value tree."""
    unknown = set(tree) - set(_SECTION_TYPES)
    problems = []
    if unknown:
        problems.append(f"unknown section(s) {sorted(unknown)}")
    sections = {}
    for name in _SECTION_TYPES:
        try:
            sections[name] = _coerce_section(name, tree.get(name, {}))
        except ValidationError as exc:
            problems.append(str(exc))
        except TypeError as exc:
            problems.append(f"{name}: {exc}")
    if problems:
        raise ValidationError(problems)
    cfg = ExperimentConfig(**sections)
    violations = cfg.validate()
    if violations:
        raise ValidationError(violations)
    return cfg


def load_config(path) -> ExperimentConfig:
    """Parse and fully validate a TOML experiment config.

    Raises ValidationError carrying every violated constraint, or a parse
    error with line information for malformed TOML.
    """
    with open(path, "rb") as fh:
        try:
            tree = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError([f"config parse error: {exc}"]) from exc
    return config_from_dict(tree)
