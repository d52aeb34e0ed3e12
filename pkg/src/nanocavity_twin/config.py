"""Experiment configuration: a strict TOML dialect validated by pydantic.

Every block maps onto the simulator's value types. Unknown keys are
rejected, missing blocks are named in the error, and the hash of the
validated, canonicalised content identifies a run.

Frequencies are given in Hz in the file and converted to rad/s on build.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from pathlib import Path
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

try:
    import tomllib
except ModuleNotFoundError:   # Python < 3.11
    import tomli as tomllib

from .cavity import CavityGeometry, NanowireScatterer, calibrate_zeta0
from .constants import TWO_PI
from .estimation import TripletConfig
from .mechanics import ModePair
from .merit import OscillatorParams
from .scan import ScanPlan
from .servo import DriftModel, LockConfig, PIGains, ProbeReadoutModel

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Unreadable or invalid configuration."""


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeometryBlock(_Block):
    length: float = Field(12e-6, gt=0)
    roc1: float = Field(28e-6, gt=0)
    roc2: float = Field(28e-6, gt=0)
    wavelength: float = Field(767e-9, gt=0)


class MirrorBlock(_Block):
    """Either explicit coatings (t1, t2, l1, l2) or a finesse target."""
    t1: Optional[float] = Field(None, gt=0, lt=1)
    t2: Optional[float] = Field(None, gt=0, lt=1)
    l1: float = Field(0.0, ge=0, lt=1)
    l2: float = Field(0.0, ge=0, lt=1)
    finesse: Optional[float] = Field(None, gt=1)
    asymmetry: float = Field(0.05, gt=0, lt=1)
    loss_share: float = Field(0.5, ge=0, lt=1)

    @model_validator(mode="after")
    def _one_form(self):
        explicit = self.t1 is not None or self.t2 is not None
        if explicit and self.finesse is not None:
            raise ValueError("give either t1/t2 or finesse, not both")
        if explicit and (self.t1 is None or self.t2 is None):
            raise ValueError("t1 and t2 must both be given")
        if not explicit and self.finesse is None:
            raise ValueError("give t1/t2 or finesse")
        return self


class WireBlock(_Block):
    """Scatterer strength is calibrated on the fully inserted antinode
    length shift unless ``zeta_real`` is given explicitly."""
    radius: float = Field(65e-9, gt=0)
    length_shift: float = Field(12e-9, gt=0)
    zeta_real: Optional[float] = None
    zeta_imag: float = Field(0.0015, ge=0)
    tip: Tuple[float, float, float] = (0.0, -5e-6, 0.0)


class MechanicsBlock(_Block):
    f1: float = Field(50e3, gt=0)
    split: float = Field(0.2, gt=-1)
    quality: float = Field(5000.0, gt=0)
    theta1_deg: float = 20.0
    mass: float = Field(1e-15, gt=0)
    temperature: float = Field(300.0, ge=0)


class MeritBlock(_Block):
    """Coupling used by the figure-of-merit report; kappa defaults to the
    empty-cavity linewidth of the configured mirrors."""
    coupling_hz_per_m: Optional[float] = Field(3e18, gt=0)
    g0_hz: Optional[float] = Field(None, gt=0)
    kappa_hz: Optional[float] = Field(None, gt=0)


class PIBlock(_Block):
    kp: float = 0.0
    ki_hz: float = Field(gt=0)
    range: float = Field(gt=0)


class ServoBlock(_Block):
    demod_frequency: float = Field(250e3, gt=0)
    demod_time_constant: float = Field(5e-6, gt=0)
    control_rate: float = Field(100e3, gt=0)
    fast: PIBlock = PIBlock(ki_hz=2e3, range=100e-9)
    slow: PIBlock = PIBlock(ki_hz=5.0, range=5e-6)
    slow_slew: float = Field(1e-6, gt=0)
    dither: float = Field(0.05e-9, gt=0)
    error_noise: float = Field(0.0, ge=0)
    lock_loss_periods: int = Field(10, ge=1)
    substeps: int = Field(1, ge=1)
    drift_rate: float = 0.0
    drift_amplitude: float = 0.0
    drift_period: float = Field(1200.0, gt=0)
    disturbance_amplitude: float = Field(0.0, ge=0)
    disturbance_frequency: float = Field(50e3, gt=0)
    duration: float = Field(0.05, gt=0)


class ProbeBlock(_Block):
    wavelength: float = Field(633e-9, gt=0)
    visibility: float = Field(0.8, gt=0, le=1)
    phase_offset: float = 0.0
    envelope_waist: float = Field(2e-6, gt=0)
    mean_power: float = Field(1e-6, gt=0)
    gradient_threshold: float = Field(0.0, ge=0)
    offset: Tuple[float, float] = (0.0, 0.0)


class ScanBlock(_Block):
    plane: Literal["XZ", "YZ", "Z"] = "XZ"
    fast_extent: float = Field(1e-6, gt=0)
    slow_extent: float = Field(1e-6, ge=0)
    center: Optional[Tuple[float, float, float]] = None
    resolution: Tuple[int, int] = (100, 100)
    dwell: float = Field(10e-3, gt=0)
    serpentine: bool = True


class ProfileBlock(_Block):
    z_start: float = -767e-9
    z_stop: float = 767e-9
    points: int = Field(400, ge=3)
    input_powers: Tuple[float, ...] = (1e-6, 2e-6, 3e-6, 4e-6, 5e-6)
    insertion_start: float = -3e-6
    insertion_stop: float = 3e-6
    insertion_points: int = Field(121, ge=3)


class DriveBlock(_Block):
    input_power: float = Field(5e-6, gt=0)
    modulation_depth: float = Field(0.7, gt=0, le=1)
    force: float = Field(6e-15, gt=0)
    force_angle_deg: float = 0.0
    static_power: float = Field(5e-6, gt=0)
    tone_power: float = Field(0.8e-6, gt=0)


class EstimationBlock(_Block):
    e_beta_deg: float = 0.0
    thermal_averages: int = Field(50, ge=1)
    thermal_resolution: float = Field(2.0, gt=0)
    readout_noise_psd: float = Field(0.0, ge=0)
    sweep_span: float = Field(30.0, gt=0)
    sweep_points: int = Field(21, ge=3)
    sweep_dwell: float = Field(0.2, gt=0)
    triplet_spacing: float = Field(50.0, gt=0)
    block_length: float = Field(0.1, gt=0)
    tracker_gain: float = Field(0.5, gt=0)
    tracker_max_step: float = Field(5.0, gt=0)
    tracker_window: float = Field(500.0, gt=0)
    average_pixels: int = Field(3, ge=1, le=16)


class ExperimentConfig(_Block):
    schema_version: Literal[1]
    name: str = ""
    seed: int = Field(0, ge=0)
    geometry: GeometryBlock
    mirrors: MirrorBlock
    wire: WireBlock = WireBlock()
    mechanics: MechanicsBlock = MechanicsBlock()
    merit: MeritBlock = MeritBlock()
    servo: ServoBlock = ServoBlock()
    probe: ProbeBlock = ProbeBlock()
    scan: ScanBlock = ScanBlock()
    profile: ProfileBlock = ProfileBlock()
    drive: DriveBlock = DriveBlock()
    estimation: EstimationBlock = EstimationBlock()

    # ---- canonical form
    def canonical(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def with_overrides(self, seed: int | None = None, pixels: tuple | None = None) -> "ExperimentConfig":
        data = self.model_dump()
        if seed is not None:
            data["seed"] = int(seed)
        if pixels is not None:
            data["scan"]["resolution"] = tuple(int(p) for p in pixels)
        return ExperimentConfig.model_validate(data)

    # ---- builders
    def cavity(self) -> CavityGeometry:
        g, m = self.geometry, self.mirrors
        if m.finesse is not None:
            return CavityGeometry.from_finesse(m.finesse, length=g.length, roc1=g.roc1, roc2=g.roc2,
                                               wavelength=g.wavelength, loss_share=m.loss_share,
                                               asymmetry=m.asymmetry)
        return CavityGeometry(g.length, g.roc1, g.roc2, g.wavelength, m.t1, m.t2, m.l1, m.l2)

    def nanowire(self, geom: CavityGeometry | None = None) -> NanowireScatterer:
        w = self.wire
        re_part = w.zeta_real
        if re_part is None:
            re_part = calibrate_zeta0(geom or self.cavity(), w.length_shift, w.zeta_imag)
        return NanowireScatterer(complex(re_part, w.zeta_imag), radius=w.radius, tip_position=tuple(w.tip))

    def modes(self) -> ModePair:
        m = self.mechanics
        return ModePair.nominal(f1=m.f1, split=m.split, quality=m.quality, theta1_deg=m.theta1_deg,
                                mass=m.mass, temperature=m.temperature)

    def oscillator(self) -> OscillatorParams:
        m = self.mechanics
        return OscillatorParams(m.mass, TWO_PI * m.f1, m.quality, m.temperature)

    def lock(self) -> LockConfig:
        s = self.servo
        return LockConfig(demod_frequency=s.demod_frequency, demod_time_constant=s.demod_time_constant,
                          control_rate=s.control_rate,
                          pi_fast=PIGains(s.fast.kp, TWO_PI * s.fast.ki_hz, s.fast.range),
                          pi_slow=PIGains(s.slow.kp, TWO_PI * s.slow.ki_hz, s.slow.range),
                          slow_slew=s.slow_slew, dither=s.dither, error_noise=s.error_noise,
                          lock_loss_periods=s.lock_loss_periods, substeps=s.substeps)

    def drift(self) -> DriftModel:
        s = self.servo
        return DriftModel(rate=s.drift_rate, amplitude=s.drift_amplitude, period=s.drift_period)

    def probe_model(self) -> ProbeReadoutModel:
        p = self.probe
        return ProbeReadoutModel(probe_wavelength=p.wavelength, visibility=p.visibility,
                                 phase_offset=p.phase_offset, envelope_waist=p.envelope_waist,
                                 mean_power=p.mean_power, gradient_threshold=p.gradient_threshold)

    def scan_plan(self) -> ScanPlan:
        s = self.scan
        center = tuple(s.center) if s.center is not None else tuple(self.wire.tip)
        return ScanPlan(s.plane, s.fast_extent, s.slow_extent, center, tuple(s.resolution), s.dwell,
                        seed=self.seed, serpentine=s.serpentine)

    def triplet(self) -> TripletConfig:
        e = self.estimation
        return TripletConfig(spacing=e.triplet_spacing, block_length=e.block_length, tracker_gain=e.tracker_gain,
                             max_step=e.tracker_max_step, window=e.tracker_window)

    @property
    def e_beta(self) -> float:
        return math.radians(self.estimation.e_beta_deg)


def _line_of(text: str, loc: tuple) -> int | None:
    """Best-effort line number for a pydantic error location."""
    lines = text.splitlines()
    block = None
    for i, ln in enumerate(lines, 1):
        head = re.match(r"\s*\[([^\]]+)\]", ln)
        if head:
            block = head.group(1).strip()
            continue
        key = re.match(r"\s*([A-Za-z0-9_]+)\s*=", ln)
        if not key:
            continue
        path = (block.split(".") if block else []) + [key.group(1)]
        if tuple(path) == tuple(str(p) for p in loc[:len(path)]):
            return i
    if loc:
        target = ".".join(str(p) for p in loc)
        for i, ln in enumerate(lines, 1):
            head = re.match(r"\s*\[([^\]]+)\]", ln)
            if head and target.startswith(head.group(1).strip()):
                return i
    return None


def _describe(exc: ValidationError, text: str) -> str:
    out = []
    for err in exc.errors():
        loc = tuple(err["loc"])
        where = ".".join(str(p) for p in loc) or "<root>"
        if err["type"] == "missing":
            kind = "block" if len(loc) == 1 and loc[0] in ExperimentConfig.model_fields \
                and loc[0] not in ("schema_version",) else "key"
            out.append(f"missing {kind} [{where}]" if kind == "block" else f"missing key {where}")
            continue
        line = _line_of(text, loc)
        prefix = f"line {line}: " if line else ""
        out.append(f"{prefix}{where}: {err['msg']}")
    return "; ".join(out)


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {_describe(exc, text)}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, str(path))


def shipped_config(name: str) -> Path:
    """Path of a reference config bundled with the package."""
    p = Path(__file__).with_name("configs") / (name if name.endswith(".cfg") else f"{name}.cfg")
    if not p.exists():
        raise ConfigError(f"no shipped config named {name!r}")
    return p
