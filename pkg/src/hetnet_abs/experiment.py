"""Seeded Monte-Carlo experiments over density sweeps, solution dumps and their validation.

Every trial draws from its own stream ``default_rng([seed, point, trial])``,
so a trial's result does not depend on how many workers run the sweep.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .association import SCHEMES, baseline_scheme, build_graph, extract_association
from .channel import EfficiencyMatrices, build_efficiency_matrices, channel_gains, sinr_matrices
from .metrics import edge_gain, load_share, mean_stderr, percentile_throughput, rate_cdf
from .optimizer import Allocation, SolverError, SolverOptions, kkt_residual, rates, solve_joint, utility
from .scenario import TIERS, ConfigError, NetworkConfig, build_deployment

log = logging.getLogger(__name__)

ALL_SCHEMES = ("joint",) + SCHEMES
EDGE_PERCENTILES = (0.05, 0.10)
FAILURE_LIMIT = 0.10
_DENSITY_INDEX = {"macro_density": 0, "pico_density": 1, "femto_density": 2}
_SOLVER_KEYS = ("kkt_tol", "max_iters", "epsilon_active", "z_grid")
_EXPERIMENT_KEYS = ("schemes", "sweep_param", "sweep_values", "sweep_unit_area_m2", "trials",
                    "baseline_z", "cdf_points", "dump_solutions") + _SOLVER_KEYS


@dataclass(frozen=True)
class ExperimentSpec:
    """Network family, schemes, sweep grid and solver settings of one experiment.

    ``sweep_values`` are multiplied by ``1 / sweep_unit_area_m2`` before use,
    so densities can be written per reference area (``250000`` for 500 m x 500 m).
    """

    network: NetworkConfig = field(default_factory=NetworkConfig)
    schemes: tuple = ALL_SCHEMES
    sweep_param: str | None = None
    sweep_values: tuple = ()
    sweep_unit_area_m2: float = 1.0
    trials: int = 1
    out_dir: Path = Path("results")
    solver: SolverOptions = field(default_factory=SolverOptions)
    baseline_z: float | None = None
    cdf_points: int = 101
    dump_solutions: bool = False
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "schemes", tuple(self.schemes))
        object.__setattr__(self, "sweep_values", tuple(float(v) for v in self.sweep_values))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        self.validate()

    @property
    def seed(self) -> int:
        return self.network.rng_seed

    def validate(self) -> None:
        unknown = [s for s in self.schemes if s not in ALL_SCHEMES]
        if unknown or not self.schemes:
            raise ConfigError(f"unknown schemes {unknown}; expected a non-empty subset of {ALL_SCHEMES}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.cdf_points < 2:
            raise ConfigError("cdf_points must be >= 2")
        if self.sweep_unit_area_m2 <= 0:
            raise ConfigError("sweep_unit_area_m2 must be positive")
        if self.baseline_z is not None and not 0.0 <= self.baseline_z <= 1.0:
            raise ConfigError("baseline_z must lie in [0, 1]")
        if self.sweep_param is not None and not self.sweep_values:
            raise ConfigError("sweep_param given without sweep_values")
        for value in self.sweep_points():
            self.config_at(value)  # raises ConfigError for invalid values

    def sweep_points(self) -> tuple:
        return self.sweep_values if self.sweep_param is not None else (math.nan,)

    def config_at(self, value: float) -> NetworkConfig:
        """Network config at one sweep value (the base config when nothing is swept)."""
        if self.sweep_param is None:
            return self.network
        v = value / self.sweep_unit_area_m2
        if self.sweep_param in _DENSITY_INDEX:
            dens = list(self.network.tier_densities)
            dens[_DENSITY_INDEX[self.sweep_param]] = v
            return self.network.replace(tier_densities=tuple(dens))
        numeric = {f.name for f in dataclasses.fields(NetworkConfig)
                   if isinstance(getattr(self.network, f.name), float)}
        if self.sweep_param not in numeric:
            raise ConfigError(f"cannot sweep {self.sweep_param!r}; use a tier density or a numeric config field")
        return self.network.replace(**{self.sweep_param: v})

    def to_dict(self) -> dict:
        """Flat key/value form, the same layout the config file uses."""
        d = self.network.to_dict()
        d.update(
            schemes=list(self.schemes),
            sweep_param=self.sweep_param,
            sweep_values=list(self.sweep_values),
            sweep_unit_area_m2=self.sweep_unit_area_m2,
            trials=self.trials,
            baseline_z=self.baseline_z,
            cdf_points=self.cdf_points,
            dump_solutions=self.dump_solutions,
        )
        d.update({k: getattr(self.solver, k) for k in _SOLVER_KEYS})
        return d

    def config_hash(self) -> str:
        text = yaml.safe_dump(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


def spec_from_dict(data: dict, **overrides) -> ExperimentSpec:
    """Build a spec from a flat mapping of network and experiment keys; unknown keys are an error."""
    data = dict(data)
    net_keys = {f.name for f in dataclasses.fields(NetworkConfig)}
    unknown = set(data) - net_keys - set(_EXPERIMENT_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    network = NetworkConfig.from_dict({k: v for k, v in data.items() if k in net_keys})
    solver = SolverOptions(**{k: data[k] for k in _SOLVER_KEYS if k in data})
    kwargs = {k: data[k] for k in _EXPERIMENT_KEYS if k in data and k not in _SOLVER_KEYS}
    seed = overrides.pop("seed", None)
    if seed is not None:
        network = network.replace(rng_seed=int(seed))
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentSpec(network=network, solver=solver, **kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_experiment_spec(path: str | Path, **overrides) -> ExperimentSpec:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a key/value mapping")
    return spec_from_dict(data, **overrides)


# ---------------------------------------------------------------------------
# one trial


def draw_instance(config: NetworkConfig, rng: np.random.Generator):
    """Deployment, efficiency matrices and the (normal, blank) SINR pair of one drop."""
    dep = build_deployment(config, rng)
    gains = channel_gains(dep, config, rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        eff = build_efficiency_matrices(dep, gains, config.noise_power_w)
    sinr = sinr_matrices(dep.bs_powers, gains, config.noise_power_w, dep.is_macro)
    return dep, eff, sinr


def _scheme_record(scheme, alloc, r, dep, eff, eps):
    report = extract_association(alloc, eff, eps)
    return {
        "scheme": scheme,
        "rates": r,
        "z": float(alloc.z),
        "utility": utility(r),
        "load": load_share(report, dep),
        "fractional": (report.fractional_normal, report.fractional_blank, report.dual_service_users),
    }


def run_trial(spec: ExperimentSpec, point: int, trial: int) -> dict:
    """Solve every scheme on drop ``(point, trial)``; solver failures are returned, not raised."""
    value = spec.sweep_points()[point]
    config = spec.config_at(value)
    rng = np.random.default_rng([spec.seed, point, trial])
    out = {"point": point, "trial": trial, "sweep_value": value, "schemes": {}, "error": None}
    try:
        dep, eff, sinr = draw_instance(config, rng)
        joint, cert = solve_joint(eff, spec.solver)
        z_br = joint.z if spec.baseline_z is None else spec.baseline_z
        for scheme in spec.schemes:
            if scheme == "joint":
                alloc, r = joint, rates(joint, eff)
            else:
                alloc, r = baseline_scheme(eff, sinr, scheme, z=z_br, opts=spec.solver)
            out["schemes"][scheme] = _scheme_record(scheme, alloc, r, dep, eff, spec.solver.epsilon_active)
        if spec.dump_solutions:
            dump_dir = spec.out_dir / "solutions"
            dump_dir.mkdir(parents=True, exist_ok=True)
            write_solution_dump(dump_dir / f"p{point}_t{trial}.csv", eff, joint, cert)
    except (SolverError, ValueError) as exc:
        out["error"] = f"{type(exc).__name__}: {exc}"
    return out


def _run_trial_args(args):
    return run_trial(*args)


# ---------------------------------------------------------------------------
# aggregation and output


def _fmt(v) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.10g}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v for v in row])


def summarize(spec: ExperimentSpec, results: list) -> dict:
    """Per sweep point aggregates; keys are the output file stems."""
    tables = {"cdf": [], "gains": [], "throughput": [], "load": [], "z": []}
    schemes = list(spec.schemes)
    for point, value in enumerate(spec.sweep_points()):
        ok = [r for r in results if r["point"] == point and r["error"] is None]
        if not ok:
            continue
        pooled = {s: np.concatenate([r["schemes"][s]["rates"] for r in ok]) for s in schemes}
        top = max(float(p.max()) for p in pooled.values())
        grid = np.linspace(0.0, top, spec.cdf_points)
        cdfs = [rate_cdf(pooled[s], grid) for s in schemes]
        for g, row in zip(grid, np.column_stack(cdfs)):
            tables["cdf"].append([value, float(g)] + [float(v) for v in row])

        for p in EDGE_PERCENTILES:
            edge = {s: [percentile_throughput(r["schemes"][s]["rates"], p) for r in ok] for s in schemes}
            for s in schemes:
                mean, se = mean_stderr(edge[s])
                tables["throughput"].append([value, s, p, mean, se, len(ok)])
            if "joint" in schemes:
                for s in schemes:
                    if s == "joint":
                        continue
                    gains = [edge_gain(a, b) for a, b in zip(edge["joint"], edge[s]) if b > 0]
                    mean, se = mean_stderr(gains)
                    tables["gains"].append([value, s, p, mean, se, len(gains)])

        for s in schemes:
            for tier in TIERS:
                for phase in ("normal", "blank"):
                    mean, se = mean_stderr([r["schemes"][s]["load"][(tier, phase)] for r in ok])
                    tables["load"].append([value, s, tier, phase, mean, se])
        if "joint" in schemes:
            mean, se = mean_stderr([r["schemes"]["joint"]["z"] for r in ok])
            tables["z"].append([value, mean, se, len(ok)])
    return tables


def write_outputs(spec: ExperimentSpec, tables: dict, out_dir: Path) -> list:
    out_dir.mkdir(parents=True, exist_ok=True)
    headers = {
        "cdf": ["sweep_value", "rate"] + [f"F_{s}" for s in spec.schemes],
        "gains": ["sweep_value", "reference", "p", "mean_gain", "stderr", "n"],
        "throughput": ["sweep_value", "scheme", "p", "mean", "stderr", "n"],
        "load": ["sweep_value", "scheme", "tier", "phase", "share", "stderr"],
        "z": ["sweep_value", "mean_z", "stderr", "n"],
    }
    written = []
    for name, header in headers.items():
        path = out_dir / f"{name}.csv"
        _write_csv(path, header, tables[name])
        written.append(path.name)
    return written


def run_experiment(spec: ExperimentSpec) -> tuple[int, list]:
    """Run every (sweep point, trial), write the CSVs and the manifest.

    Returns
    -------
    (int, list)
        Exit status (0, or 2 when more than 10% of trials failed) and the
        trial results ordered by (sweep point, trial).
    """
    t0 = time.perf_counter()
    tasks = [(spec, p, t) for p in range(len(spec.sweep_points())) for t in range(spec.trials)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_trial_args, tasks, chunksize=max(1, len(tasks) // (4 * spec.workers))))
    else:
        results = [run_trial(*task) for task in tasks]
    results.sort(key=lambda r: (r["point"], r["trial"]))

    failed = [r for r in results if r["error"] is not None]
    for r in failed:
        log.warning("trial (point %d, trial %d) failed: %s", r["point"], r["trial"], r["error"])
    written = write_outputs(spec, summarize(spec, results), spec.out_dir)
    failure_rate = len(failed) / len(results)
    status = 2 if failure_rate > FAILURE_LIMIT else 0
    manifest = {
        "version": __version__,
        "seed": spec.seed,
        "config_hash": spec.config_hash(),
        "config": spec.to_dict(),
        "solver": {k: getattr(spec.solver, k) for k in _SOLVER_KEYS},
        "trials_total": len(results),
        "trials_failed": [{"point": r["point"], "trial": r["trial"], "error": r["error"]} for r in failed],
        "failure_rate": failure_rate,
        "exit_status": status,
        "workers": spec.workers,
        "wall_time_s": round(time.perf_counter() - t0, 3),
        "outputs": written,
    }
    with open(spec.out_dir / "manifest.yaml", "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=False)
    return status, results


# ---------------------------------------------------------------------------
# solution dumps


class DumpParseError(ValueError):
    """Malformed solution dump; the message names the offending line."""


def write_solution_dump(path, eff: EfficiencyMatrices, allocation: Allocation, certificate=None) -> None:
    """CSV rows ``kind,i,j,a,b``: shape, per-BS macro flag, efficiencies, shares, z and duals.

    Floats are written with ``repr`` so a reload reproduces them bit for bit.
    """
    n_u, n_bs = eff.c_n.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "i", "j", "a", "b"])
        w.writerow(["shape", n_u, n_bs, "", ""])
        for j in range(n_bs):
            w.writerow(["bs", j, "", int(eff.is_macro[j]), ""])
        for i in range(n_u):
            for j in range(n_bs):
                w.writerow(["eff", i, j, repr(float(eff.c_n[i, j])), repr(float(eff.c_b[i, j]))])
        for i, j in zip(*np.nonzero((allocation.x != 0) | (allocation.y != 0))):
            w.writerow(["alloc", int(i), int(j), repr(float(allocation.x[i, j])), repr(float(allocation.y[i, j]))])
        z_free = int(bool(certificate is not None and certificate.z_free))
        w.writerow(["z", "", "", repr(float(allocation.z)), z_free])
        if certificate is not None:
            for j in range(n_bs):
                w.writerow(["dual", j, "", repr(float(certificate.lam[j])), repr(float(certificate.nu[j]))])


def read_solution_dump(path):
    """Inverse of :func:`write_solution_dump`; returns ``(eff, allocation, (lam, nu), z_free)``."""
    shape = None
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["kind", "i", "j", "a", "b"]:
        raise DumpParseError(f"{path}:1: expected header 'kind,i,j,a,b'")
    z = None
    z_free = False
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 5:
            raise DumpParseError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
        kind = row[0]
        try:
            if kind == "shape":
                n_u, n_bs = int(row[1]), int(row[2])
                if n_u < 1 or n_bs < 1:
                    raise ValueError("shape must be positive")
                shape = (n_u, n_bs)
                c_n, c_b = np.zeros(shape), np.zeros(shape)
                x, y = np.zeros(shape), np.zeros(shape)
                is_macro = np.zeros(n_bs, dtype=bool)
                lam, nu = np.zeros(n_bs), np.zeros(n_bs)
                continue
            if shape is None:
                raise ValueError("'shape' row must come first")
            if kind == "bs":
                is_macro[int(row[1])] = bool(int(row[3]))
            elif kind == "eff":
                i, j = int(row[1]), int(row[2])
                c_n[i, j], c_b[i, j] = float(row[3]), float(row[4])
            elif kind == "alloc":
                i, j = int(row[1]), int(row[2])
                x[i, j], y[i, j] = float(row[3]), float(row[4])
            elif kind == "z":
                z = float(row[3])
                z_free = bool(int(row[4])) if row[4] else False
            elif kind == "dual":
                j = int(row[1])
                lam[j], nu[j] = float(row[3]), float(row[4])
            else:
                raise ValueError(f"unknown row kind {kind!r}")
        except (ValueError, IndexError) as exc:
            raise DumpParseError(f"{path}:{lineno}: {exc}") from exc
    if shape is None:
        raise DumpParseError(f"{path}:{len(rows)}: no 'shape' row")
    if z is None:
        raise DumpParseError(f"{path}:{len(rows)}: no 'z' row")
    try:
        eff = EfficiencyMatrices(c_n, c_b, is_macro)
        alloc = Allocation(x, y, z)
    except ValueError as exc:
        raise DumpParseError(f"{path}:{len(rows)}: {exc}") from exc
    return eff, alloc, (lam, nu), z_free


def validate_instance(path, tol: float = 1e-6, epsilon: float = 1e-6) -> list:
    """Re-check a stored solution; returns ``[(check, passed, detail), ...]``."""
    eff, alloc, duals, z_free = read_solution_dump(path)
    cert = kkt_residual(eff, alloc, duals, eps=epsilon, z_free=z_free)
    report = extract_association(alloc, eff, epsilon)
    graph = build_graph(report)
    bounds = report.bounds()
    checks = [("kkt", cert.certified(tol), f"max residual {cert.max_residual:.3e} (tol {tol:.1e})")]
    for name in ("fractional_normal", "fractional_blank", "dual_service_users"):
        count = getattr(report, name)
        checks.append((name, count <= bounds[name], f"{count} <= {bounds[name]}"))
    multi = graph.multi_edges()
    checks.append(("no_multi_edge", not multi, f"{len(multi)} user pair(s) share two BSs in one phase"))
    cycles = {ph: graph.cycle(ph) for ph in ("normal", "blank")}
    bad = [ph for ph, c in cycles.items() if c is not None]
    checks.append(("acyclic", not bad, "cycle in " + ", ".join(bad) if bad else "contracted graphs are forests"))
    return checks
