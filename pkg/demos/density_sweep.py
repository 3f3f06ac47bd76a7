"""
How much blanking as picocells densify
======================================

A short Monte-Carlo sweep over pico density. For each density we draw a few
networks on a 1000 m torus, solve the joint problem and report the mean blank
fraction together with the worst-10% gain over the best association without
blanking. Raise TRIALS for smoother curves; the acceptance suite uses 50.
"""

import sys

from hetnet_abs.experiment import ExperimentSpec, run_trial
from hetnet_abs.metrics import edge_gain, mean_stderr, percentile_throughput
from hetnet_abs.scenario import NetworkConfig

TRIALS = int(sys.argv[1]) if len(sys.argv) > 1 else 5
A = 1 / 500**2

spec = ExperimentSpec(
    network=NetworkConfig(region_side_m=1000.0, tier_densities=(A, A, 0.0), rng_seed=3),
    schemes=("joint", "load_aware_no_br"),
    sweep_param="pico_density",
    sweep_values=(1, 2, 4, 6, 8, 10),
    sweep_unit_area_m2=500**2,
    trials=TRIALS,
)

print("picos per 500 m square   mean z          worst-10% gain")
for point, value in enumerate(spec.sweep_points()):
    ok = [r for r in (run_trial(spec, point, t) for t in range(TRIALS)) if r["error"] is None]
    z, z_se = mean_stderr([r["schemes"]["joint"]["z"] for r in ok])
    g, g_se = mean_stderr([
        edge_gain(percentile_throughput(r["schemes"]["joint"]["rates"], 0.1),
                  percentile_throughput(r["schemes"]["load_aware_no_br"]["rates"], 0.1))
        for r in ok
    ])
    print(f"{value:>22.0f}   {z:.3f} +- {z_se:.3f}   {g:+.3f} +- {g_se:.3f}")
