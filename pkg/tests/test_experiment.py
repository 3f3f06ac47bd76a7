from pathlib import Path

import numpy as np
import pytest
import yaml

from hetnet_abs.channel import EfficiencyMatrices
from hetnet_abs.experiment import (
    DumpParseError,
    ExperimentSpec,
    load_experiment_spec,
    read_solution_dump,
    run_experiment,
    run_trial,
    spec_from_dict,
    validate_instance,
    write_solution_dump,
)
from hetnet_abs.optimizer import Allocation, SolverOptions, solve_joint
from hetnet_abs.scenario import ConfigError, NetworkConfig

A = 1 / 500**2


def _spec(tmp_path, **kw):
    base = dict(
        network=NetworkConfig(tier_densities=(A, 4 * A, 0.0), user_density=30 * A, rng_seed=11),
        schemes=("joint", "max_sinr_no_br", "load_aware_no_br"),
        sweep_param="pico_density",
        sweep_values=(2, 4),
        sweep_unit_area_m2=500**2,
        trials=2,
        out_dir=tmp_path,
    )
    base.update(kw)
    return ExperimentSpec(**base)


def _csvs(path):
    return {p.name: p.read_bytes() for p in sorted(path.glob("*.csv"))}


def test_sweep_values_scale_to_densities(tmp_path):
    spec = _spec(tmp_path)
    assert spec.config_at(4.0).tier_densities[1] == pytest.approx(4 * A)
    assert spec.config_at(4.0).tier_densities[0] == pytest.approx(A)


def test_sweep_over_config_field(tmp_path):
    spec = _spec(tmp_path, sweep_param="path_loss_exponent", sweep_values=(3.0, 4.0), sweep_unit_area_m2=1.0)
    assert spec.config_at(4.0).path_loss_exponent == 4.0


@pytest.mark.parametrize(
    "changes",
    [
        {"schemes": ("joint", "round_robin")},
        {"schemes": ()},
        {"trials": 0},
        {"workers": 0},
        {"sweep_param": "bandwidth"},
        {"sweep_values": (-1.0,)},
        {"baseline_z": 1.5},
        {"sweep_values": ()},
    ],
)
def test_invalid_specs_rejected(tmp_path, changes):
    with pytest.raises(ConfigError):
        _spec(tmp_path, **changes)


def test_unknown_scheme_fails_before_any_output(tmp_path):
    out = tmp_path / "out"
    with pytest.raises(ConfigError, match="round_robin"):
        spec_from_dict({"schemes": ["joint", "round_robin"]}, out_dir=out)
    assert not out.exists()


def test_unknown_config_key(tmp_path):
    with pytest.raises(ConfigError, match="colour"):
        spec_from_dict({"colour": "blue"})


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump({"region_side_m": 500.0, "trials": 3, "sweep_param": "pico_density",
                                    "sweep_values": [1, 2], "sweep_unit_area_m2": 250000, "kkt_tol": 1e-7}))
    spec = load_experiment_spec(path, seed=42, trials=5, out_dir=tmp_path / "o")
    assert spec.seed == 42 and spec.trials == 5 and spec.solver.kkt_tol == 1e-7
    assert spec.sweep_values == (1.0, 2.0)


def test_config_hash_tracks_content(tmp_path):
    a = _spec(tmp_path)
    assert a.config_hash() == _spec(tmp_path).config_hash()
    assert a.config_hash() != _spec(tmp_path, trials=3).config_hash()


def test_trial_stream_independent_of_order(tmp_path):
    spec = _spec(tmp_path)
    first = run_trial(spec, 1, 1)
    run_trial(spec, 0, 0)
    again = run_trial(spec, 1, 1)
    np.testing.assert_array_equal(first["schemes"]["joint"]["rates"], again["schemes"]["joint"]["rates"])


def test_run_writes_outputs_and_manifest(tmp_path):
    spec = _spec(tmp_path)
    status, results = run_experiment(spec)
    assert status == 0 and len(results) == 4
    assert [(r["point"], r["trial"]) for r in results] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert set(_csvs(tmp_path)) == {"cdf.csv", "gains.csv", "load.csv", "throughput.csv", "z.csv"}
    manifest = yaml.safe_load((tmp_path / "manifest.yaml").read_text())
    assert manifest["seed"] == 11 and manifest["config_hash"] == spec.config_hash()
    assert manifest["solver"]["kkt_tol"] == 1e-6 and manifest["trials_failed"] == []
    assert manifest["version"] and manifest["wall_time_s"] >= 0
    z_rows = (tmp_path / "z.csv").read_text().splitlines()
    assert z_rows[0] == "sweep_value,mean_z,stderr,n" and len(z_rows) == 3


def test_reruns_and_worker_counts_are_byte_identical(tmp_path):
    run_experiment(_spec(tmp_path / "a"))
    run_experiment(_spec(tmp_path / "b"))
    run_experiment(_spec(tmp_path / "c", workers=2))
    a = _csvs(tmp_path / "a")
    assert a == _csvs(tmp_path / "b") == _csvs(tmp_path / "c")


def test_excess_solver_failures_give_exit_status_2(tmp_path):
    spec = _spec(tmp_path, solver=SolverOptions(max_iters=1), sweep_values=(4,))
    status, results = run_experiment(spec)
    assert status == 2
    assert all("ConvergenceError" in r["error"] for r in results)
    manifest = yaml.safe_load((tmp_path / "manifest.yaml").read_text())
    assert manifest["failure_rate"] == 1.0 and len(manifest["trials_failed"]) == 2


# -- solution dumps


@pytest.fixture
def certified_dump(tmp_path, rng):
    spec = _spec(tmp_path, sweep_values=(4,), trials=1, dump_solutions=True)
    run_experiment(spec)
    return tmp_path / "solutions" / "p0_t0.csv"


def test_dump_round_trip(tmp_path, rng):
    c_n = rng.uniform(0.5, 2.0, (4, 2))
    c_b = np.column_stack([np.zeros(4), c_n[:, 1] * 1.5])
    eff = EfficiencyMatrices(c_n, c_b, is_macro=[True, False])
    alloc, cert = solve_joint(eff)
    path = tmp_path / "d.csv"
    write_solution_dump(path, eff, alloc, cert)
    eff2, alloc2, (lam, nu), z_free = read_solution_dump(path)
    np.testing.assert_array_equal(eff2.c_n, eff.c_n)
    np.testing.assert_array_equal(alloc2.x, alloc.x)
    np.testing.assert_array_equal(lam, cert.lam)
    assert alloc2.z == alloc.z and not z_free


def test_certified_dump_passes_every_check(certified_dump):
    checks = validate_instance(certified_dump)
    assert [c[0] for c in checks] == ["kkt", "fractional_normal", "fractional_blank", "dual_service_users",
                                      "no_multi_edge", "acyclic"]
    assert all(passed for _, passed, _ in checks)


def test_corrupted_share_fails_kkt(certified_dump):
    lines = certified_dump.read_text().splitlines()
    k = next(n for n, line in enumerate(lines) if line.startswith("alloc,"))
    kind, i, j, a, b = lines[k].split(",")
    lines[k] = ",".join([kind, i, j, repr(float(a) + 0.1), b])
    certified_dump.write_text("\n".join(lines) + "\n")
    checks = dict((name, passed) for name, passed, _ in validate_instance(certified_dump))
    assert not checks["kkt"]


def test_fabricated_shared_pair_fires_multi_edge(tmp_path):
    eff = EfficiencyMatrices(np.ones((2, 2)), np.zeros((2, 2)), is_macro=[True, True])
    alloc = Allocation(np.full((2, 2), 0.5), np.zeros((2, 2)), 0.0)
    path = tmp_path / "fake.csv"
    write_solution_dump(path, eff, alloc)
    checks = {name: passed for name, passed, _ in validate_instance(path)}
    assert not checks["no_multi_edge"] and not checks["acyclic"]


@pytest.mark.parametrize(
    "body, line",
    [
        ("kind,i,j,a,b\nshape,2,2,,\neff,0,0,abc,1.0\n", 3),
        ("kind,i,j,a,b\nalloc,0,0,0.1,0.1\n", 2),
        ("kind,i,j,a,b\nshape,1,1,,\nz,,,0.5\n", 3),
        ("kind,i,j,a,b\nshape,1,1,,\nmystery,0,0,1,1\n", 3),
        ("i,j,x,y\n", 1),
    ],
)
def test_malformed_dump_names_line(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(DumpParseError, match=rf"bad\.csv:{line}:"):
        read_solution_dump(path)


@pytest.mark.parametrize("path", sorted((Path(__file__).parents[1] / "configs").glob("*.yaml")), ids=lambda p: p.name)
def test_shipped_configs_load(path):
    spec = load_experiment_spec(path)
    assert spec.trials >= 1 and spec.schemes
