"""Charts, atlases and moving tensor components between them.

A tensor has one set of components per chart.  This script builds the
three bundled atlases, walks a point across chart boundaries and shows
how vector and one-form components respond to the chart Jacobians.
"""

import numpy as np

from flowtensor.geometry import (
    TensorValue,
    euclidean_atlas,
    locate_chart,
    sphere_atlas,
    torus_atlas,
    transform_tensor,
    transition,
)

print("=== Euclidean space: one global chart ===")
flat = euclidean_atlas(2)
print(f"atlas {flat.name!r} has {len(flat.charts)} chart(s)")

print()
print("=== The flat torus: four overlapping charts ===")
torus = torus_atlas(2)
for ch in torus.charts:
    anchor = ch.from_coords(np.zeros(2))
    print(f"  chart {ch.id}: anchored at base point {anchor}, radius {ch.radius}")

coords = np.array([0.3, 0.1])  # chart-0 coordinates near the overlap
cid = locate_chart(torus, coords, 0)
print(f"point {coords} (chart-0 coords) is best covered by chart {cid}")
moved = transition(torus, 0, 1, coords)
print(f"the same point in chart-1 coordinates: {moved}")
p0 = torus.chart(0).from_coords(coords)
p1 = torus.chart(1).from_coords(moved)
print(f"abstract point through chart 0: {p0}, through chart 1: {p1}")

print()
print("=== The sphere: two stereographic charts ===")
sphere = sphere_atlas()
u = np.array([0.8, -0.5])
p = sphere.chart(0).from_coords(u)
print(f"chart-0 coords {u} -> unit vector {np.round(p, 6)} (|p| = {np.linalg.norm(p):.12f})")
v = transition(sphere, 0, 1, u)
print(f"the transition is the inversion u / |u|^2: {v}")

print()
print("=== Component transforms ===")
# doubling the first coordinate: vectors stretch, one-forms shrink
jac = np.diag([2.0, 1.0])
inv = np.diag([0.5, 1.0])
vec = TensorValue((1, 0), np.array([1.0, 1.0]))
form = TensorValue((0, 1), np.array([1.0, 1.0]))
print("under y = (2 x0, x1):")
print(f"  vector  (1, 1) -> {transform_tensor(vec, jac, inv).components}")
print(f"  one-form (1, 1) -> {transform_tensor(form, jac, inv).components}")

mixed = TensorValue((1, 1), np.array([[0.0, 1.0], [0.0, 0.0]]))
out = transform_tensor(mixed, np.diag([2.0, 3.0]), np.diag([1 / 2, 1 / 3]))
print(f"  mixed K^0_1 = 1 under diag(2, 3) -> K'^0_1 = {out.components[0, 1]:.6f}")
