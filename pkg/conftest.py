"""
Shared fixtures: small hand-built sequences with known geometry
"""

import math
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from cad_core import (
    BooleanOp, CadSequence, ExtentType, Extrusion, Loop, SketchStep, make_circle, make_line,
)


def polygon_loop(points):
    """Closed loop of lines through the given vertices"""
    n = len(points)
    return Loop(tuple(make_line(points[i], points[(i + 1) % n]) for i in range(n)))


def square_loop(lo=0.0, hi=1.0):
    return polygon_loop([(lo, lo), (hi, lo), (hi, hi), (lo, hi)])


def regular_polygon_loop(center, radius, n, phase=0.0):
    pts = [(center[0] + radius * math.cos(phase + 2 * math.pi * i / n),
            center[1] + radius * math.sin(phase + 2 * math.pi * i / n)) for i in range(n)]
    return polygon_loop(pts)


def unit_extrusion(e1=0.5, op=BooleanOp.NEW, extent=ExtentType.ONE_SIDED, origin=(0.5, 0.5, 0.5)):
    """Identity orientation, scale 0.5: the [0,1]^2 sketch maps to a unit square in the plane"""
    return Extrusion((0.5, 0.5, 0.5), origin, 0.5, (e1, 0.0), op, extent)


def single_step(*loops, extrusion=None):
    return CadSequence((SketchStep(tuple(loops), extrusion or unit_extrusion()),))


@pytest.fixture
def cube_sequence():
    return single_step(square_loop())


@pytest.fixture
def cylinder_sequence():
    return single_step(Loop((make_circle((0.5, 0.5), 0.25),)))


@pytest.fixture
def triangle_sequence():
    return single_step(polygon_loop([(0.2, 0.2), (0.8, 0.2), (0.5, 0.8)]))
