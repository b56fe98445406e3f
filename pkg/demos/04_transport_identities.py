"""Verifying a pathwise transport identity end to end.

Both sides of the identity are computed independently: the left side
transports the tensor through the realised flow, the right side
accumulates the discrete integrals of its expansion (Lie-derivative
drift and noise terms, driver increments, brackets, second-order term).
Their gap shrinks with the step size at the strong order of the scheme.
"""

import numpy as np

from flowtensor.flow import integrate_flow
from flowtensor.kiw_verifier import (
    convergence_study,
    eval_lhs,
    eval_rhs,
    synthesize_K_path,
)
from flowtensor.scenarios import get_scenario, list_scenarios
from flowtensor.stochastics import build_driving_paths

print("=== Built-in scenarios ===")
for name in list_scenarios():
    print(f"  {name}")

print()
print("=== One path under the microscope: log-normal one-form ===")
sc = get_scenario("gbm_oneform")
drivers = build_driving_paths(
    sc.base_grid, sc.sde.n_noise, sc.seed, 4,
    fv_specs=sc.fv_specs, mart_specs=sc.mart_specs,
)
flow = integrate_flow(sc.sde, drivers, sc.x0, sc.scheme)
kpath = synthesize_K_path(sc, drivers)
lhs = eval_lhs(sc, flow, kpath)
rhs = eval_rhs(sc, flow, kpath, drivers)
print("time   pullback   assembled   exp(B_t)")
times = drivers.grid.times()
for k in (0, 4, 8, 12, 16):
    print(f"{times[k]:.2f}   {lhs[0, k, 0]:+.5f}   {rhs.values[0, k, 0]:+.5f}"
          f"   {np.exp(drivers.bm[0, k, 0]):+.5f}")
print("with linear coefficients the two sides agree to machine precision at")
print(f"every grid time: max gap = {np.max(np.abs(lhs - rhs.values)):.2e}")
print("(the remaining distance to exp(B_t) dx is the flow discretisation error)")

print()
print("=== Convergence under dyadic refinement: rotations of the sphere ===")
report = convergence_study(get_scenario("kunita_sphere_rotation"), levels=4)
for line in report.summary_lines():
    print(line)

print()
print("=== The identity terms, averaged over paths ===")
sc2 = get_scenario("kiw_ito_pullback_bracket")
rep2 = convergence_study(sc2, levels=2, n_paths=32)
for lvl in rep2.levels:
    terms = ", ".join(f"{k}={v:.3f}" for k, v in sorted(lvl.term_means.items()))
    print(f"  level {lvl.level} (h = {lvl.h:.4f}): {terms}")
