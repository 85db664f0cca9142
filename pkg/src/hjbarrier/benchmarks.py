"""Benchmark instances with known ground truth.

Safe instances have a short closed-form argument (a comparison bound on
``|x|`` or on the radius); unsafe ones have an explicit exiting trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

from .problem import Problem, parse_problem


@dataclass(frozen=True)
class Benchmark:
    name: str
    safe: bool
    reason: str
    text: str

    def problem(self) -> Problem:
        return parse_problem(self.text)


def _doc(n, m, f1, f2, dist, h, box, init, T, extra_init=""):
    f1s = ", ".join(f'"{p}"' for p in f1)
    f2s = ", ".join("[" + ", ".join(f'"{p}"' for p in row) + "]" for row in f2)
    kind, center, radius = dist
    return f"""[system]
n = {n}
m = {m}
f1 = [{f1s}]
f2 = [{f2s}]

[disturbance]
kind = "{kind}"
center = {center}
radius = {radius}

[safe]
h = "{h}"
box = {box}

[init]
kind = "box"
bounds = {init}
{extra_init}
[horizon]
T = {T}

[solver]
seed = 0
"""


BOX1 = "[[-2.0, 2.0]]"
BOX2 = "[[-2.0, 2.0], [-2.0, 2.0]]"
DISK = "x1^2 + x2^2 - 1"

BENCHMARKS = [
    Benchmark("s1_linear_decay", True,
              "|x| <= max(0.2, 0.1) since d|x|/dt <= -|x| + 0.1",
              _doc(1, 1, ["-x1"], [["1"]], ("box", [0.0], [0.1]), "x1^2 - 1", BOX1,
                   "[[-0.2, 0.2]]", 1.0)),
    Benchmark("s2_stationary", True, "x(t) = x0",
              _doc(1, 1, ["0"], [["0"]], ("box", [0.0], [0.0]), "x1^2 - 1", BOX1,
                   "[[-0.5, 0.5]]", 1.0)),
    Benchmark("s3_rotation", True,
              "radius grows at most at rate 0.1: r <= 0.3*sqrt(2) + 0.1",
              _doc(2, 1, ["x2", "-x1"], [["0"], ["1"]], ("box", [0.0], [0.1]), DISK, BOX2,
                   "[[-0.3, 0.3], [-0.3, 0.3]]", 1.0)),
    Benchmark("s4_decay_2d_box", True, "|xi| <= max(0.3, 0.2) per axis",
              _doc(2, 2, ["-x1", "-x2"], [["1", "0"], ["0", "1"]], ("box", [0.0, 0.0], [0.2, 0.2]),
                   DISK, BOX2, "[[-0.3, 0.3], [-0.3, 0.3]]", 1.0)),
    Benchmark("s4_decay_2d_ball", True, "|x| <= max(0.3*sqrt(2), 0.2)",
              _doc(2, 2, ["-x1", "-x2"], [["1", "0"], ["0", "1"]], ("ball", [0.0, 0.0], [0.2]),
                   DISK, BOX2, "[[-0.3, 0.3], [-0.3, 0.3]]", 1.0)),
    Benchmark("s5_pure_disturbance", True, "|x| <= 0.1 + 0.5 * 1",
              _doc(1, 1, ["0"], [["1"]], ("box", [0.0], [1.0]), "x1^2 - 1", BOX1,
                   "[[-0.1, 0.1]]", 0.5)),
    Benchmark("s6_cubic_decay", True,
              "|x| decreases wherever |x|^3 > 0.1, so |x| <= max(0.5, 0.1^(1/3))",
              _doc(1, 1, ["-x1^3"], [["1"]], ("box", [0.0], [0.1]), "x1^2 - 1", BOX1,
                   "[[-0.5, 0.5]]", 1.0)),
    Benchmark("u1_constant_drift", False, "x(t) = x0 + t reaches 1 at t <= 0.7",
              _doc(1, 1, ["1"], [["0"]], ("box", [0.0], [0.0]), "x1^2 - 1", BOX1,
                   "[[0.3, 0.5]]", 1.0)),
    Benchmark("u2_long_horizon", False, "d = 1 gives x(t) = x0 + t, exit before t = 1.1",
              _doc(1, 1, ["0"], [["1"]], ("box", [0.0], [1.0]), "x1^2 - 1", BOX1,
                   "[[-0.1, 0.1]]", 2.0)),
    Benchmark("u3_drift_2d", False, "x1(t) = x1(0) + t reaches 1 by t = 1.2",
              _doc(2, 1, ["1", "0"], [["0"], ["1"]], ("box", [0.0], [0.5]), DISK, BOX2,
                   "[[-0.2, 0.2], [-0.2, 0.2]]", 1.5)),
    Benchmark("u4_unstable_2d", False, "x1(t) = x1(0) e^t exceeds 1 before t = 1.21",
              _doc(2, 1, ["x1", "x2"], [["0"], ["1"]], ("box", [0.0], [0.1]), DISK, BOX2,
                   "[[0.3, 0.5], [-0.1, 0.1]]", 1.5)),
]


def get_benchmark(name: str) -> Benchmark:
    for b in BENCHMARKS:
        if b.name == name:
            return b
    raise KeyError(name)
