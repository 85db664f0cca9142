"""Small system builders shared by the tests."""

from hjbarrier.dynamics import Box, DisturbanceSet, InitialSet, SafeSet, SystemSpec
from hjbarrier.poly import parse_poly


def poly1(text):
    return parse_poly(text, ["x1"], {"x": "x1"})


def poly2(text):
    return parse_poly(text, ["x1", "x2"])


def cert1(text):
    return parse_poly(text, ["x1", "t"], {"x": "x1"})


def cert2(text):
    return parse_poly(text, ["x1", "x2", "t"])


def system1(f1="0", f2="1", h="x^2 - 1", x0=(-0.5, 0.5), D=(0.0, 0.0), T=1.0, enclosing=(-2.0, 2.0),
            clamp=None, kind="box"):
    """One state, one disturbance ``d`` in ``[D0 - D1, D0 + D1]`` (box) or ball of radius ``D1``."""
    return SystemSpec(
        1, 1, (poly1(f1),), ((poly1(f2),),),
        DisturbanceSet(kind, (D[0],), (D[1],)),
        SafeSet(poly1(h), Box((enclosing[0],), (enclosing[1],))),
        InitialSet("box", Box((x0[0],), (x0[1],))), T,
        None if clamp is None else Box((clamp[0],), (clamp[1],)))


def system2(f1, f2, h="x1^2 + x2^2 - 1", x0=((-0.3, 0.3), (-0.3, 0.3)), D=None, T=1.0):
    """Two states; ``f2`` is a list of rows; ``D`` is a DisturbanceSet."""
    m = len(f2[0])
    D = D or DisturbanceSet("box", (0.0,) * m, (0.0,) * m)
    return SystemSpec(
        2, m, tuple(poly2(p) for p in f1), tuple(tuple(poly2(p) for p in row) for row in f2), D,
        SafeSet(poly2(h), Box((-2.0, -2.0), (2.0, 2.0))),
        InitialSet("box", Box.from_pairs(x0)), T)
