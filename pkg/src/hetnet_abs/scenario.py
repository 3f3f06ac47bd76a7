"""Multi-tier deployment generation: hexagonal macro sites plus PPP small cells and users."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

TIERS = ("macro", "pico", "femto")
MACRO, PICO, FEMTO = 0, 1, 2


class ConfigError(ValueError):
    """Raised for invalid or unreadable network configurations."""


@dataclass(frozen=True)
class NetworkConfig:
    """Simulation parameters for one deployment family.

    Densities are in BSs (or users) per square metre, powers in watts. The
    per-tier sequences are ordered (macro, pico, femto).
    """

    region_side_m: float = 500.0
    macro_layout: str = "hex_grid"
    tier_densities: tuple[float, float, float] = (1 / 500**2, 4 / 500**2, 12 / 500**2)
    user_density: float = 80 / 500**2
    tier_powers_w: tuple[float, float, float] = (40.0, 1.0, 0.1)
    noise_power_w: float = 10 ** (-124 / 10) * 1e-3
    path_loss_exponent: float = 3.5
    fading: str = "rayleigh"
    rng_seed: int = 0
    shadowing_std_db: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "tier_densities", tuple(float(d) for d in self.tier_densities))
        object.__setattr__(self, "tier_powers_w", tuple(float(p) for p in self.tier_powers_w))
        self.validate()

    def validate(self) -> None:
        if len(self.tier_densities) != 3 or len(self.tier_powers_w) != 3:
            raise ConfigError("tier_densities and tier_powers_w need one entry per tier (macro, pico, femto)")
        if self.region_side_m <= 0:
            raise ConfigError("region_side_m must be positive")
        if self.macro_layout not in ("hex_grid", "ppp"):
            raise ConfigError(f"unknown macro_layout {self.macro_layout!r}")
        macro, pico, femto = self.tier_densities
        if macro <= 0 or pico <= 0 or femto < 0:
            raise ConfigError("macro and pico densities must be > 0, femto density >= 0")
        if self.user_density <= 0:
            raise ConfigError("user_density must be positive")
        if min(self.tier_powers_w) <= 0:
            raise ConfigError("tier powers must be positive")
        if self.noise_power_w <= 0:
            raise ConfigError("noise_power_w must be positive")
        if self.path_loss_exponent <= 2:
            raise ConfigError("path_loss_exponent must exceed 2")
        if self.fading not in ("none", "rayleigh"):
            raise ConfigError(f"unknown fading {self.fading!r}")
        if self.shadowing_std_db < 0:
            raise ConfigError("shadowing_std_db must be >= 0")

    def replace(self, **changes) -> "NetworkConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["tier_densities"] = list(self.tier_densities)
        d["tier_powers_w"] = list(self.tier_powers_w)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_network_config(path: str | Path) -> NetworkConfig:
    """Read a flat YAML key/value file whose keys are exactly the NetworkConfig fields."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a key/value mapping")
    return NetworkConfig.from_dict(data)


@dataclass(frozen=True)
class Deployment:
    """Base stations and users dropped in a square region.

    Macro BSs come first, so ids ``0 .. n_macro-1`` are the macro tier.
    """

    region_side_m: float
    bs_positions: np.ndarray  # (N_B, 2)
    bs_tiers: np.ndarray  # (N_B,) ints in {MACRO, PICO, FEMTO}
    bs_powers: np.ndarray  # (N_B,) watts
    user_positions: np.ndarray  # (N_U, 2)
    n_macro: int = field(init=False)

    def __post_init__(self):
        for name in ("bs_positions", "bs_tiers", "bs_powers", "user_positions"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "n_macro", int(np.sum(self.bs_tiers == MACRO)))

    @property
    def n_bs(self) -> int:
        return len(self.bs_tiers)

    @property
    def n_users(self) -> int:
        return len(self.user_positions)

    @property
    def is_macro(self) -> np.ndarray:
        return self.bs_tiers == MACRO

    def tier_names(self) -> list[str]:
        return [TIERS[t] for t in self.bs_tiers]

    def __eq__(self, other):
        if not isinstance(other, Deployment):
            return NotImplemented
        return (
            self.region_side_m == other.region_side_m
            and np.array_equal(self.bs_positions, other.bs_positions)
            and np.array_equal(self.bs_tiers, other.bs_tiers)
            and np.array_equal(self.bs_powers, other.bs_powers)
            and np.array_equal(self.user_positions, other.user_positions)
        )

    __hash__ = None


def hex_lattice_pitch(density: float) -> float:
    """Inter-site distance of a hexagonal lattice with the given site density."""
    return float(np.sqrt(2.0 / (np.sqrt(3.0) * density)))


def generate_hex_macro_layout(region_side_m: float, macro_density: float) -> np.ndarray:
    """Centres of a hexagonal lattice with ``macro_density`` sites per m^2, centred in the region.

    Rows are spaced ``pitch * sqrt(3)/2`` apart and every other row is shifted by
    half a pitch. The row and column counts are the nearest integers to the
    region extent over the spacing, reduced until the pattern fits.
    """
    if macro_density <= 0 or region_side_m <= 0:
        raise ValueError("macro density and region side must be positive")
    pitch = hex_lattice_pitch(macro_density)
    row_gap = pitch * np.sqrt(3.0) / 2
    n_rows = int(round(region_side_m / row_gap))
    n_cols = int(round(region_side_m / pitch))
    while n_rows > 1 and (n_rows - 1) * row_gap > region_side_m:
        n_rows -= 1
    while n_cols > 1 and (n_cols - 1 + 0.5 * (n_rows > 1)) * pitch > region_side_m:
        n_cols -= 1
    if n_rows < 1 or n_cols < 1:
        raise ValueError(
            f"region of side {region_side_m} m is too small for one site at density {macro_density}"
        )

    rows, cols = np.meshgrid(np.arange(n_rows), np.arange(n_cols), indexing="ij")
    xs = (cols + 0.5 * (rows % 2)).ravel() * pitch
    ys = rows.ravel() * row_gap
    width = (n_cols - 1 + 0.5 * (n_rows > 1)) * pitch
    height = (n_rows - 1) * row_gap
    xs = xs + (region_side_m - width) / 2
    ys = ys + (region_side_m - height) / 2
    return np.column_stack([xs, ys])


def sample_ppp(density: float, region_side_m: float, rng: np.random.Generator) -> np.ndarray:
    """Homogeneous Poisson point process on ``[0, L)^2``; returns an (n, 2) array."""
    if density < 0:
        raise ValueError("density must be non-negative")
    n = rng.poisson(density * region_side_m**2) if density > 0 else 0
    return rng.uniform(0.0, region_side_m, size=(n, 2))


def build_deployment(config: NetworkConfig, rng: np.random.Generator) -> Deployment:
    L = config.region_side_m
    macro_density, pico_density, femto_density = config.tier_densities
    if config.macro_layout == "hex_grid":
        macros = generate_hex_macro_layout(L, macro_density)
    else:
        macros = sample_ppp(macro_density, L, rng)
    picos = sample_ppp(pico_density, L, rng)
    femtos = sample_ppp(femto_density, L, rng)
    users = sample_ppp(config.user_density, L, rng)

    positions = np.vstack([macros, picos, femtos]) if len(macros) + len(picos) + len(femtos) else np.empty((0, 2))
    tiers = np.concatenate([
        np.full(len(macros), MACRO),
        np.full(len(picos), PICO),
        np.full(len(femtos), FEMTO),
    ]).astype(int)
    if len(tiers) == 0:
        raise ValueError("deployment has no base stations")
    if len(users) == 0:
        raise ValueError("deployment has no users")
    powers = np.asarray(config.tier_powers_w)[tiers]
    return Deployment(L, positions, tiers, powers, users)
