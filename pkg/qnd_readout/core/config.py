# qnd_readout/core/config.py

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Optional
import importlib.resources
import math

from loguru import logger
from omegaconf import DictConfig, OmegaConf
from omegaconf.errors import OmegaConfBaseException

from .constants import Channel, DecodeMode
from .exceptions import ConfigurationError


@dataclass
class SimConfig:
    """Parameters of the simulated device and charge sensor (SI units)"""
    dt_sample: float = 16.38e-6
    trace_length: float = 2.01e-3
    dt_rep: float = 3.263e-3
    t1_logical: float = 1.8
    t1_ancilla: float = 1e-3
    gamma_out: float = 1e4
    gamma_in: float = 1e4
    gamma_dark: float = 0.0
    p_crot_flip: float = 0.0
    p_ancilla_init: float = 0.0
    i_low: float = 0.0
    i_high: float = 1.0
    sigma_noise: float = 0.15
    moving_average: int = 1
    master_seed: int = 1

    @property
    def n_samples(self) -> int:
        return int(round(self.trace_length / self.dt_sample))

    @property
    def composite_flip(self) -> float:
        """Probability that the ancilla bit differs from the logical state"""
        p, q = self.p_crot_flip, self.p_ancilla_init
        return p * (1 - q) + q * (1 - p)

    def validate(self) -> None:
        if not self.dt_sample > 0 or not math.isfinite(self.dt_sample):
            raise ConfigurationError(f"dt_sample must be positive, got {self.dt_sample}")
        if self.n_samples < 1:
            raise ConfigurationError("trace_length must cover at least one sample")
        if not self.dt_rep > 0:
            raise ConfigurationError(f"dt_rep must be positive, got {self.dt_rep}")
        for name in ("t1_logical", "t1_ancilla"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive or inf")
        for name in ("gamma_out", "gamma_in", "gamma_dark"):
            value = getattr(self, name)
            if math.isnan(value) or value < 0:
                raise ConfigurationError(f"{name} must be a nonnegative rate, got {value}")
        for name in ("p_crot_flip", "p_ancilla_init"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {value}")
        if not self.sigma_noise >= 0:
            raise ConfigurationError(f"sigma_noise must be nonnegative, got {self.sigma_noise}")
        if self.moving_average < 1:
            raise ConfigurationError("moving_average must be at least one sample")
        if self.master_seed < 0:
            raise ConfigurationError("master_seed must be a nonnegative integer")


@dataclass
class CalibrationConfig:
    n_bins: int = 60
    pseudo_count: float = 0.5
    llr_clamp: float = 50.0
    # None sweeps every sample instant
    t_r_grid: Optional[List[float]] = None

    def validate(self) -> None:
        if self.n_bins < 1:
            raise ConfigurationError("n_bins must be at least 1")
        if self.pseudo_count < 0:
            raise ConfigurationError("pseudo_count must be nonnegative")
        if not self.llr_clamp > 0:
            raise ConfigurationError("llr_clamp must be positive")
        if self.t_r_grid is not None and len(self.t_r_grid) == 0:
            raise ConfigurationError("t_r_grid must not be empty")


@dataclass
class LogConfig:
    level: str = "INFO"
    format: str = "{time} | {level} | {message}"


@dataclass
class ExperimentConfig:
    """Root configuration shared by every subcommand"""
    sim: SimConfig = field(default_factory=SimConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    log: LogConfig = field(default_factory=LogConfig)
    n_trials_per_state: int = 10_000
    max_cycles: int = 15
    decode_modes: List[str] = field(default_factory=lambda: [m.value for m in DecodeMode])
    added_noise_sigma: float = 0.0
    # calibration traces per state, as a fraction of n_trials_per_state, drawn
    # from an independent stream
    calibration_fraction: float = 1.0
    prep_error_eta1: float = 0.0
    prep_error_eta0: float = 0.0
    channel: str = Channel.TRACES.value
    channel_eps1: float = 0.25
    channel_eps0: float = 0.25
    # None decodes with sim.t1_logical
    decoder_t1: Optional[float] = None
    priors: List[float] = field(default_factory=lambda: [0.5, 0.5])
    low_snr_target_eps: List[float] = field(default_factory=lambda: [0.411, 0.423])
    threads: int = 1

    @property
    def n_calibration(self) -> int:
        return max(1, math.ceil(self.calibration_fraction * self.n_trials_per_state))

    @property
    def effective_decoder_t1(self) -> float:
        return self.sim.t1_logical if self.decoder_t1 is None else self.decoder_t1

    def validate(self) -> None:
        self.sim.validate()
        self.calibration.validate()
        if self.n_trials_per_state < 100:
            raise ConfigurationError(
                f"n_trials_per_state must be at least 100, got {self.n_trials_per_state}"
            )
        if self.max_cycles < 1:
            raise ConfigurationError("max_cycles must be at least 1")
        unknown = set(self.decode_modes) - {m.value for m in DecodeMode}
        if unknown or not self.decode_modes:
            raise ConfigurationError(f"Invalid decode_modes: {self.decode_modes}")
        if not self.added_noise_sigma >= 0:
            raise ConfigurationError("added_noise_sigma must be nonnegative")
        if not 0.0 < self.calibration_fraction <= 1.0:
            raise ConfigurationError("calibration_fraction must lie in (0, 1]")
        for name in ("prep_error_eta1", "prep_error_eta0"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if self.channel not in {c.value for c in Channel}:
            raise ConfigurationError(f"Unknown channel: {self.channel}")
        for name in ("channel_eps1", "channel_eps0"):
            if not 0.0 <= getattr(self, name) < 0.5:
                raise ConfigurationError(f"{name} must lie in [0, 0.5)")
        if self.decoder_t1 is not None and not self.decoder_t1 > 0:
            raise ConfigurationError("decoder_t1 must be positive or inf")
        if len(self.priors) != 2 or min(self.priors) <= 0 or abs(sum(self.priors) - 1) > 1e-9:
            raise ConfigurationError(f"priors must be two positive numbers summing to 1, got {self.priors}")
        if len(self.low_snr_target_eps) != 2:
            raise ConfigurationError("low_snr_target_eps must hold (eps1, eps0)")
        if self.threads < 1:
            raise ConfigurationError("threads must be at least 1")


def packaged_defaults() -> DictConfig:
    """Load the default_config.yml shipped with the package"""
    with importlib.resources.files('qnd_readout').joinpath('default_config.yml').open('rb') as f:
        return OmegaConf.load(f)


def suite_names() -> list[str]:
    return sorted(packaged_defaults().get("suites", {}).keys())


def load_config(
    path: Path | None = None,
    suite: str | None = None,
    overrides: dict[str, Any] | None = None,
) -> ExperimentConfig:
    """
    Build a validated ExperimentConfig.

    Precedence, lowest first: dataclass defaults, packaged log defaults,
    named suite, config file, explicit overrides (CLI flags).

    Raises:
        ConfigurationError: unknown keys, wrong types, or out-of-range values
    """
    defaults = packaged_defaults()
    layers: list[Any] = [OmegaConf.structured(ExperimentConfig), {"log": defaults.log}]

    if suite is not None:
        suites = defaults.get("suites", {})
        if suite not in suites:
            raise ConfigurationError(f"Unknown suite '{suite}', expected one of {suite_names()}")
        layers.append(suites[suite])

    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"Config file not found: {path}")
        try:
            layers.append(OmegaConf.load(path))
        except Exception as e:
            raise ConfigurationError(f"Could not parse config file {path}: {e}") from e

    if overrides:
        layers.append(OmegaConf.create(overrides))

    try:
        merged = OmegaConf.merge(*layers)
        cfg = OmegaConf.to_object(merged)
    except OmegaConfBaseException as e:
        raise ConfigurationError(f"Invalid configuration: {e}") from e

    assert isinstance(cfg, ExperimentConfig)
    cfg.validate()
    logger.debug(f"Loaded configuration (suite={suite}, path={path})")
    return cfg


def effective_config(cfg: ExperimentConfig) -> dict[str, Any]:
    """Plain-dict echo of a configuration for embedding in output files"""
    container = OmegaConf.to_container(OmegaConf.structured(cfg))
    assert isinstance(container, dict)
    return container
