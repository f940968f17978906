"""Tour of the l1-ball geometry helpers.

Runs through the closed-form pieces the optimizer is built from: the
linear minimization oracle, minimal faces, the in-face oracle, away
directions, and the step caps that keep a step inside the ball or inside
a face. Everything is printed; nothing is plotted.
"""

import numpy as np

from fwsd.geometry import (
    L1Ball,
    away_direction,
    in_face_lmo,
    in_face_step_cap,
    lmo,
    max_feasible_step,
    minimal_face,
)

rng = np.random.default_rng(0)
ball = L1Ball(dim=6, radius=2.0)
print(f"feasible set: ||x||_1 <= {ball.radius} in R^{ball.dim}")
print(f"diameter in the l1 norm: {ball.diameter()}")
print()

# --- the linear minimization oracle picks a signed vertex ------------------

g = rng.standard_normal(6)
v = lmo(ball, g)
print("gradient        ", np.round(g, 3))
print(f"oracle vertex    {v.sign:+d} * {ball.radius} * e_{v.index}")
print(f"linear value     {g @ v.value:.4f}  (most negative over the ball)")
print()

# --- minimal faces are read off the signed support -------------------------

interior = np.array([0.3, -0.2, 0.0, 0.1, 0.0, 0.0])
boundary = np.array([1.2, 0.0, -0.8, 0.0, 0.0, 0.0])
for name, x in (("interior", interior), ("boundary", boundary)):
    face = minimal_face(ball, x)
    print(f"{name} point {x}")
    print(f"  ||x||_1 = {np.abs(x).sum():.2f}, on_boundary = {face.on_boundary}")
    print(f"  positive support {face.j_plus}, negative support {face.j_minus}")
print()

# --- the in-face oracle only sees the extreme points of the face -----------

face = minimal_face(ball, boundary)
c = rng.standard_normal(6)
pick = in_face_lmo(ball, face, c)
print("in-face oracle on the boundary point above:")
print(f"  cost vector     {np.round(c, 3)}")
print(f"  face extreme pt {pick.sign:+d} * {ball.radius} * e_{pick.index}")
print()

# --- away directions back off the worst vertex of the face -----------------

g_check = rng.standard_normal(6)
d, accepted = away_direction(ball, boundary, g_check)
print("away direction from the boundary point:")
print(f"  direction {np.round(d, 3)}")
print(f"  accepted as strict descent: {accepted}")
print()

# --- step caps: plain feasibility vs staying inside the face ---------------

cap_ball = max_feasible_step(ball, boundary, d)
cap_face, binding = in_face_step_cap(ball, boundary, d)
print(f"feasibility cap along d: {cap_ball:.4f}")
print(f"in-face cap along d:     {cap_face:.4f} (binding coordinates {binding})")

# stepping exactly to the in-face cap zeroes the binding coordinate exactly
landed = boundary + cap_face * d
for j in binding:
    landed[j] = 0.0
print(f"point at the cap        {np.round(landed, 6)}")
print(f"still on the boundary:  {minimal_face(ball, landed).on_boundary}")
