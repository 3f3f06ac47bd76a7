"""Link gains, normal/blank-phase SINR and spectral efficiency matrices."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scenario import Deployment, NetworkConfig

MIN_DISTANCE_M = 1.0


def path_gain(distance_m, exponent: float, fade_draw=1.0):
    """Power gain ``max(d, 1)^-exponent * fade_draw`` (unit-mean exponential fade for Rayleigh)."""
    d = np.maximum(np.asarray(distance_m, dtype=float), MIN_DISTANCE_M)
    return d ** (-exponent) * fade_draw


def wrapped_distances(users: np.ndarray, sites: np.ndarray, region_side_m: float) -> np.ndarray:
    """Toroidal user-to-site distances, shape (N_U, N_B)."""
    delta = np.abs(users[:, None, :] - sites[None, :, :])
    delta = np.minimum(delta, region_side_m - delta)
    return np.hypot(delta[..., 0], delta[..., 1])


def channel_gains(deployment: Deployment, config: NetworkConfig, rng: np.random.Generator) -> np.ndarray:
    """Static linear gain matrix h (N_U x N_B): path loss, one fade per link, optional log-normal shadowing."""
    dist = wrapped_distances(deployment.user_positions, deployment.bs_positions, deployment.region_side_m)
    shape = dist.shape
    fade = rng.exponential(1.0, size=shape) if config.fading == "rayleigh" else 1.0
    h = path_gain(dist, config.path_loss_exponent, fade)
    if config.shadowing_std_db > 0:
        h = h * 10 ** (rng.normal(0.0, config.shadowing_std_db, size=shape) / 10)
    return h


def sinr_normal(P, h, noise_w, i, j):
    """SINR of user i from BS j when every BS transmits."""
    rx = np.asarray(P) * np.asarray(h)[i]
    return rx[j] / (rx.sum() - rx[j] + noise_w)


def sinr_blank(P, h, noise_w, i, j, macro_set):
    """SINR of user i from BS j while the macro BSs in ``macro_set`` are silent (0 for a macro j)."""
    macro_set = set(int(m) for m in macro_set)
    if j in macro_set:
        return 0.0
    rx = np.asarray(P) * np.asarray(h)[i]
    active = np.ones(len(rx), dtype=bool)
    active[list(macro_set)] = False
    return rx[j] / (rx[active].sum() - rx[j] + noise_w)


def sinr_matrices(P, h, noise_w, is_macro) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised normal and blank SINR matrices, each (N_U, N_B)."""
    rx = np.asarray(h) * np.asarray(P)[None, :]
    is_macro = np.asarray(is_macro, dtype=bool)
    # explicit off-diagonal sums; total - rx cancels badly next to a strong BS
    others = 1.0 - np.eye(rx.shape[1])
    sinr_n = rx / (rx @ others + noise_w)
    sinr_b = rx / (rx @ (others * ~is_macro[:, None]) + noise_w)
    sinr_b[:, is_macro] = 0.0
    return sinr_n, sinr_b


def spectral_efficiency(sinr):
    """Shannon efficiency log2(1 + sinr) in bit/s/Hz, accurate for tiny SINR."""
    return np.log1p(np.asarray(sinr, dtype=float)) / np.log(2.0)


@dataclass(frozen=True)
class EfficiencyMatrices:
    """Per-(user, BS) spectral efficiency in normal (``c_n``) and blank (``c_b``) resources."""

    c_n: np.ndarray
    c_b: np.ndarray
    is_macro: np.ndarray | None = None
    tiers: tuple[str, ...] | None = None

    def __post_init__(self):
        c_n = np.array(self.c_n, dtype=float)
        c_b = np.array(self.c_b, dtype=float)
        if c_n.ndim != 2 or c_n.shape != c_b.shape:
            raise ValueError("c_n and c_b must be matrices of equal shape")
        if np.any(c_n < 0) or np.any(c_b < 0) or not (np.all(np.isfinite(c_n)) and np.all(np.isfinite(c_b))):
            raise ValueError("spectral efficiencies must be finite and non-negative")
        if self.is_macro is None:
            is_macro = ~np.any(c_b > 0, axis=0) & np.any(c_n > 0, axis=0)
        else:
            is_macro = np.array(self.is_macro, dtype=bool)
            if np.any(c_b[:, is_macro] != 0):
                raise ValueError("blank-phase efficiency of a macro BS must be zero")
        for arr in (c_n, c_b, is_macro):
            arr.setflags(write=False)
        object.__setattr__(self, "c_n", c_n)
        object.__setattr__(self, "c_b", c_b)
        object.__setattr__(self, "is_macro", is_macro)
        if self.tiers is not None:
            object.__setattr__(self, "tiers", tuple(self.tiers))

    @property
    def n_users(self) -> int:
        return self.c_n.shape[0]

    @property
    def n_bs(self) -> int:
        return self.c_n.shape[1]

    @property
    def n_macro(self) -> int:
        return int(self.is_macro.sum())

    def infeasible_users(self) -> np.ndarray:
        """Users with no positive efficiency towards any BS in either phase."""
        return np.flatnonzero(~(np.any(self.c_n > 0, axis=1) | np.any(self.c_b > 0, axis=1)))

    def permuted(self, user_perm, bs_perm) -> "EfficiencyMatrices":
        ix = np.ix_(user_perm, bs_perm)
        tiers = None if self.tiers is None else tuple(self.tiers[k] for k in bs_perm)
        return EfficiencyMatrices(self.c_n[ix], self.c_b[ix], self.is_macro[bs_perm], tiers)


def build_efficiency_matrices(deployment: Deployment, gains: np.ndarray, noise_w: float) -> EfficiencyMatrices:
    gains = np.asarray(gains, dtype=float)
    if gains.shape != (deployment.n_users, deployment.n_bs):
        raise ValueError(f"gain matrix shape {gains.shape} does not match deployment")
    sinr_n, sinr_b = sinr_matrices(deployment.bs_powers, gains, noise_w, deployment.is_macro)
    eff = EfficiencyMatrices(
        spectral_efficiency(sinr_n),
        spectral_efficiency(sinr_b),
        deployment.is_macro,
        tuple(deployment.tier_names()),
    )
    bad = eff.infeasible_users()
    if len(bad):
        warnings.warn(f"users without any usable link: {bad.tolist()}", RuntimeWarning, stacklevel=2)
    return eff


def write_efficiency_csv(eff: EfficiencyMatrices, path: str | Path, phase: str = "normal") -> None:
    """Dump one phase's matrix; rows are users, header columns are ``bs<id>:<tier>``."""
    mat = {"normal": eff.c_n, "blank": eff.c_b}[phase]
    tiers = eff.tiers or tuple("macro" if m else "small" for m in eff.is_macro)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user"] + [f"bs{j}:{t}" for j, t in enumerate(tiers)])
        for i, row in enumerate(mat):
            w.writerow([i] + [f"{v:.10g}" for v in row])

