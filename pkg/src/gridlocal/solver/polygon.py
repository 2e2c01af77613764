"""Inner polygonal approximation of disks."""
from __future__ import annotations

import numpy as np

from ..errors import ValidationError


def polygon_normals(sides):
    """Unit outward normals of a regular polygon with a vertex on the +p axis."""
    if sides < 4:
        raise ValidationError("polygon needs at least 4 sides")
    ang = (2 * np.arange(sides) + 1) * np.pi / sides
    return np.column_stack([np.cos(ang), np.sin(ang)])


def polygonize_quadratic(s_max, sides=16):
    """Half-planes ``A @ [p, q] <= b`` of the polygon inscribed in ``p^2 + q^2 <= s_max^2``.

    Returns
    -------
    A : (sides, 2) array
    b : (sides,) array, all equal to ``s_max * cos(pi / sides)``

    The polygon's vertices lie on the circle, so every feasible point
    satisfies the quadratic; the largest radial gap is
    ``s_max * (1 - cos(pi / sides))`` at the edge midpoints.
    """
    if s_max < 0:
        raise ValidationError("s_max must be non-negative")
    normals = polygon_normals(sides)
    return normals, np.full(sides, s_max * np.cos(np.pi / sides))


def max_under_coverage(s_max, sides):
    return s_max * (1 - np.cos(np.pi / sides))
