"""
Repairing a grazing motor trajectory
====================================

A servo motor is asked to follow a speed profile that rides within a
fraction of a percent of its operating envelope.  The planned profile is
feasible but has no margin: any perturbation, numerical or physical,
can push it out of the admissible set.  This script certifies the model
hypotheses, then synthesizes a nearby profile that keeps a strictly
positive distance to the boundary while staying within a prescribed
tolerance of the original in both the sup norm and the control cost.
"""

import numpy as np

import tightpath as tp

# The surge scenario accelerates past the rated-speed boundary region
# and settles just inside it.  clearance is the designed gap between
# the reference and the boundary; 5e-4 on an envelope of radius 1.
scenario = tp.motor_scenario("surge", steps=1000)

raw = scenario.field.margin(0.0, scenario.xbar.states, 0.0)
print(f"reference boundary margin: min {raw.min():.3e}, max {raw.max():.3e}")

# Certification samples the dynamics and the constraint geometry and
# records every constant the synthesis needs: growth envelope, state
# Lipschitz rates, inward-pointing slack, boundary drift modulus.
bundle = tp.certify_all(scenario.model, scenario.field, scenario.ubar,
                        scenario.xbar, seed=0)
for name, status in sorted(bundle.provenance.items()):
    print(f"  {name:>18s}: {status}")

# lam bounds both the sup-norm deviation and the change in weighted
# L2 control cost.  The tightening eps is chosen automatically by a
# feasibility scan, largest first.
lam = 0.1
x_eps, u_eps, constants, report = tp.repair(
    scenario.xbar, scenario.ubar, lam, bundle, scenario.field, scenario.model)

print()
print(tp.render_report(constants, report, lam))

# The repaired profile is an ordinary trajectory; save it next to the
# script for inspection.  Both files round-trip through load_trajectory
# and load_control bit for bit.
tp.save_csv("surge_repaired_states.csv", x_eps)
tp.save_csv("surge_repaired_controls.csv", u_eps)

assert report.interiority_margin > 0.0
assert tp.linf_distance(scenario.xbar, x_eps) <= lam
assert abs(report.final_cost_gap) <= lam
print("contract holds: interior, sup gap and cost gap within", lam)
