"""Exact linear oracles and facial geometry of scaled l1 balls.

The feasible sets handled here are cross-polytopes ``{x : ||x||_1 <= delta}``.
Everything a Frank-Wolfe style method needs from such a set is closed form:
the linear minimization oracle picks a signed vertex, the minimal face of a
boundary point is read off the signed support, and line searches against the
constraint reduce to scanning the breakpoints of a piecewise linear function.
No numerical solver is involved anywhere in this module.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Norm(enum.Enum):
    """Norm choice attached to a variable block."""

    L1 = "l1"
    L2 = "l2"


@dataclass(frozen=True)
class L1Ball:
    """A scaled l1 ball ``{x in R^dim : ||x||_1 <= radius}``.

    ``norm_x`` is the norm the ambient block is measured in when step sizes
    and diameters are computed; it does not change the feasible set itself.
    """

    dim: int
    radius: float
    norm_x: Norm = Norm.L1

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError(f"ball dimension must be positive, got {self.dim}")
        if not np.isfinite(self.radius) or self.radius <= 0.0:
            raise ValueError(f"ball radius must be positive and finite, got {self.radius}")

    def diameter(self) -> float:
        """Diameter of the ball in ``norm_x``.

        The farthest pair is a vertex and its negation, at distance
        ``2 * radius`` in the l1 norm and in the l2 norm alike.
        """
        return 2.0 * self.radius

    def contains(self, x: np.ndarray, tol: float = 1e-10) -> bool:
        """Feasibility check with an absolute slack of ``tol`` on the norm."""
        x = _check_vector(x, self.dim, "x")
        return float(np.sum(np.abs(x))) <= self.radius + tol

    def norm(self, v: np.ndarray) -> float:
        """Length of ``v`` measured in this block's ``norm_x``."""
        if self.norm_x is Norm.L1:
            return float(np.sum(np.abs(v)))
        return float(np.linalg.norm(v))


@dataclass(frozen=True, eq=False)
class Vertex:
    """A signed vertex ``sign * radius * e_index`` of an l1 ball."""

    index: int
    sign: int
    value: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class Face:
    """Minimal face of a point, encoded by its signed support.

    ``j_plus`` and ``j_minus`` hold the indices of strictly positive and
    strictly negative coordinates, ``j_zero`` the rest. When ``on_boundary``
    is false the minimal face is the whole ball and the index sets are
    informational only.
    """

    j_plus: tuple[int, ...]
    j_minus: tuple[int, ...]
    j_zero: tuple[int, ...]
    on_boundary: bool

    @property
    def support(self) -> tuple[int, ...]:
        """Indices carrying nonzero weight, ascending."""
        return tuple(sorted(self.j_plus + self.j_minus))

    def sign_of(self, j: int) -> int:
        if j in self.j_plus:
            return 1
        if j in self.j_minus:
            return -1
        return 0


def _check_vector(v: np.ndarray, dim: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (dim,):
        raise ValueError(f"{name} has shape {v.shape}, expected ({dim},)")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def lmo(ball: L1Ball, g: np.ndarray) -> Vertex:
    """Linear minimization oracle: ``argmin { g @ x : ||x||_1 <= radius }``.

    The minimizer is the signed vertex ``-sign(g[j]) * radius * e_j`` at a
    coordinate of maximal ``|g[j]|``. Ties break to the lowest index, and a
    sign tie (``g[j] == 0``) resolves to the positive vertex.
    """
    g = _check_vector(g, ball.dim, "g")
    j = int(np.argmax(np.abs(g)))
    sign = 1 if g[j] <= 0.0 else -1
    value = np.zeros(ball.dim)
    value[j] = sign * ball.radius
    return Vertex(index=j, sign=sign, value=value)


def minimal_face(ball: L1Ball, x: np.ndarray, tol: float = 1e-12) -> Face:
    """Classify the signed support of a feasible point.

    Coordinates within ``tol`` of zero are treated as zero, and the point
    counts as a boundary point when ``| ||x||_1 - radius | <= tol``.
    """
    x = _check_vector(x, ball.dim, "x")
    norm1 = float(np.sum(np.abs(x)))
    if norm1 > ball.radius + max(tol, 1e-9):
        raise ValueError(f"point is infeasible: ||x||_1 = {norm1} > {ball.radius}")
    j_plus = tuple(int(j) for j in np.flatnonzero(x > tol))
    j_minus = tuple(int(j) for j in np.flatnonzero(x < -tol))
    on_support = set(j_plus) | set(j_minus)
    j_zero = tuple(j for j in range(ball.dim) if j not in on_support)
    on_boundary = abs(norm1 - ball.radius) <= tol
    return Face(j_plus=j_plus, j_minus=j_minus, j_zero=j_zero, on_boundary=on_boundary)


def in_face_lmo(ball: L1Ball, face: Face, c: np.ndarray) -> Vertex:
    """Minimize ``c @ x`` over a proper face of the ball.

    The extreme points of the face of a boundary point are the signed
    vertices ``sign(x[j]) * radius * e_j`` for ``j`` in the support, so the
    minimizer is the support index with the smallest ``sign(x[j]) * c[j]``.
    Ties break to the lowest index.
    """
    if not face.on_boundary:
        raise ValueError("in_face_lmo requires a boundary face; the face of an "
                         "interior point is the whole ball, use lmo instead")
    support = face.support
    if not support:
        raise ValueError("boundary face has empty support")
    c = _check_vector(c, ball.dim, "c")
    best_j = support[0]
    best_val = face.sign_of(best_j) * c[best_j]
    for j in support[1:]:
        val = face.sign_of(j) * c[j]
        if val < best_val:
            best_j, best_val = j, val
    sign = face.sign_of(best_j)
    value = np.zeros(ball.dim)
    value[best_j] = sign * ball.radius
    return Vertex(index=best_j, sign=sign, value=value)


def away_direction(
    ball: L1Ball, x_bar: np.ndarray, g_check: np.ndarray, tol: float = 1e-12
) -> tuple[np.ndarray, bool]:
    """Away direction ``d = x_bar - x_check`` over the minimal face of ``x_bar``.

    ``x_check`` maximizes ``g_check @ x`` over the face (over the whole ball
    when ``x_bar`` is interior). The direction is accepted only when it is a
    strict descent direction, ``g_check @ d < -tol``, and no longer than the
    set diameter in the block norm. Rejected directions are returned anyway
    so the caller can log them.
    """
    x_bar = _check_vector(x_bar, ball.dim, "x_bar")
    g_check = _check_vector(g_check, ball.dim, "g_check")
    face = minimal_face(ball, x_bar, tol)
    if face.on_boundary and face.support:
        x_check = in_face_lmo(ball, face, -g_check).value
    else:
        x_check = lmo(ball, -g_check).value
    d = x_bar - x_check
    descent = float(g_check @ d) < -tol
    accepted = descent and ball.norm(d) <= ball.diameter()
    return d, accepted


def _ball_cap(ball: L1Ball, x: np.ndarray, d: np.ndarray) -> float:
    # Largest a >= 0 with ||x + a d||_1 <= radius. The norm along the ray is
    # piecewise linear with kinks where coordinates cross zero, so evaluate
    # it at each kink and interpolate exactly on the segment that crosses
    # the radius.
    delta = ball.radius
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(d != 0.0, -x / d, np.inf)
    kinks = np.unique(t[(t > 0.0) & np.isfinite(t)])
    prev = 0.0
    phi_prev = float(np.sum(np.abs(x)))
    if phi_prev > delta:
        phi_prev = delta  # feasible within tol by precondition
    for tk in kinks:
        phi_k = float(np.sum(np.abs(x + tk * d)))
        if phi_k <= delta:
            prev, phi_prev = float(tk), phi_k
            continue
        return prev + (delta - phi_prev) * (float(tk) - prev) / (phi_k - phi_prev)
    slope = float(np.sum(np.abs(d)))  # past the last kink every term grows
    return prev + (delta - phi_prev) / slope


def _sign_cap(x: np.ndarray, d: np.ndarray, support: tuple[int, ...]) -> tuple[float, tuple[int, ...]]:
    # First step length at which a supported coordinate moving against its
    # sign reaches zero, together with every index binding there.
    caps: list[tuple[float, int]] = []
    for j in support:
        if x[j] > 0.0 and d[j] < 0.0:
            caps.append((x[j] / -d[j], j))
        elif x[j] < 0.0 and d[j] > 0.0:
            caps.append((-x[j] / d[j], j))
    if not caps:
        return np.inf, ()
    alpha = min(c for c, _ in caps)
    binding = tuple(j for c, j in caps if c == alpha)
    return alpha, binding


def in_face_step_cap(
    ball: L1Ball, x_bar: np.ndarray, d: np.ndarray, tol: float = 1e-9
) -> tuple[float, tuple[int, ...]]:
    """Step cap along an in-face direction, with the indices that bind.

    For a boundary point the cap is the first sign crossing on the support;
    the returned indices are the coordinates that land exactly on zero
    there, which lets a caller zero them out explicitly. For an interior
    point the minimal face is the whole ball and the cap is the plain
    feasibility cap (no binding indices).
    """
    x_bar = _check_vector(x_bar, ball.dim, "x_bar")
    d = _check_vector(d, ball.dim, "d")
    if not np.any(d != 0.0):
        raise ValueError("direction is identically zero")
    if not ball.contains(x_bar, tol=max(tol, 1e-10)):
        raise ValueError("x_bar is infeasible")
    face = minimal_face(ball, x_bar, tol=min(tol, 1e-12))
    if not face.on_boundary:
        return _ball_cap(ball, x_bar, d), ()
    if any(abs(d[j]) > tol for j in face.j_zero):
        raise ValueError("in-face direction must vanish on the zero set of x_bar")
    signed = sum(face.sign_of(j) * d[j] for j in face.support)
    if signed > tol * max(1.0, float(np.sum(np.abs(d)))):
        return 0.0, ()  # direction points out of the ball immediately
    alpha, binding = _sign_cap(x_bar, d, face.support)
    return alpha, binding


def max_feasible_step(
    ball: L1Ball, x_bar: np.ndarray, d: np.ndarray, in_face: bool = False, tol: float = 1e-9
) -> float:
    """Largest step ``a`` keeping ``x_bar + a * d`` feasible.

    With ``in_face=False`` this is the exact breakpoint scan against the
    l1 constraint. With ``in_face=True`` the step is additionally capped so
    that no supported coordinate of a boundary point crosses zero and the
    zero coordinates stay zero (the direction must vanish there).
    """
    if in_face:
        return in_face_step_cap(ball, x_bar, d, tol=tol)[0]
    x_bar = _check_vector(x_bar, ball.dim, "x_bar")
    d = _check_vector(d, ball.dim, "d")
    if not np.any(d != 0.0):
        raise ValueError("direction is identically zero")
    if not ball.contains(x_bar, tol=max(tol, 1e-10)):
        raise ValueError("x_bar is infeasible")
    return max(0.0, _ball_cap(ball, x_bar, d))
