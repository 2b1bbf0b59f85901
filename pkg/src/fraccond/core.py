"""Grids, kernel constants and kernel weights shared by every other module.

Conventions used throughout the package:

* the computational window is the symmetric interval [-L, L], sampled by N
  equispaced nodes including both endpoints (h = 2L/(N-1));
* every nodal field is extended by zero beyond the window, and the
  conductivity is identically 1 there;
* each node owns the cell [x_i - h/2, x_i + h/2].  The cells tile
  [-L - h/2, L + h/2], so the analytic "tail" integrals of the kernel start
  at the cutoff radius L + h/2.  This keeps every node, including the two
  endpoint nodes, strictly inside the truncation radius and makes the
  punctured lattice sum plus tail an exact partition of the whole-line
  integral.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger("fraccond")

# fractional orders outside this range produce degenerate kernels; operator
# assembly clamps into it (with a log message) rather than failing
S_MIN = 0.05
S_MAX = 0.99

# Lanczos coefficients, g = 7, 9 terms
_LANCZOS_G = 7.0
_LANCZOS_P = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


def gamma_fn(x: float) -> float:
    """Euler Gamma via a Lanczos approximation, reflection for x < 0.5.

    Relative accuracy is ~1e-13 away from the poles; raises ValueError at
    the poles (x = 0, -1, -2, ...).
    """
    x = float(x)
    if x <= 0.0 and x == math.floor(x):
        raise ValueError(f"gamma_fn: pole at non-positive integer x={x}")
    if x < 0.5:
        # Gamma(x) Gamma(1-x) = pi / sin(pi x)
        return math.pi / (math.sin(math.pi * x) * gamma_fn(1.0 - x))
    z = x - 1.0
    acc = _LANCZOS_P[0]
    for i, p in enumerate(_LANCZOS_P[1:], start=1):
        acc += p / (z + i)
    t = z + _LANCZOS_G + 0.5
    return math.sqrt(2.0 * math.pi) * t ** (z + 0.5) * math.exp(-t) * acc


def cns(n: int, s: float) -> float:
    """Kernel normalization constant 4^s Gamma(n/2+s) / (pi^{n/2} |Gamma(-s)|).

    Satisfies cns(n, s) / (s (1 - s)) -> 4 n / omega_{n-1} as s -> 1^-.
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"cns: fractional order s={s} outside (0, 1)")
    if n < 1:
        raise ValueError(f"cns: dimension n={n} must be >= 1")
    return (
        4.0**s
        * gamma_fn(n / 2.0 + s)
        / (math.pi ** (n / 2.0) * abs(gamma_fn(-s)))
    )


def surface_measure(n: int) -> float:
    """omega_{n-1}: surface measure of the unit sphere in R^n (omega_0 = 2)."""
    return 2.0 * math.pi ** (n / 2.0) / gamma_fn(n / 2.0)


@dataclass(frozen=True)
class FracParams:
    """Fractional order s, spatial dimension n, cached constant C_{n,s}."""

    s: float
    n: int = 1
    cns: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise ValueError(f"FracParams: s={self.s} outside (0, 1)")
        if self.n < 1:
            raise ValueError(f"FracParams: n={self.n} must be >= 1")
        object.__setattr__(self, "cns", cns(self.n, self.s))

    def clamped(self) -> "FracParams":
        """Copy with s clamped into the assembly range [S_MIN, S_MAX]."""
        if S_MIN <= self.s <= S_MAX:
            return self
        s = min(max(self.s, S_MIN), S_MAX)
        logger.warning("fractional order %g clamped to %g for assembly", self.s, s)
        return FracParams(s, self.n)


@dataclass(frozen=True)
class Grid:
    """Uniform 1-D lattice on [-L, L] split into interior (omega) and exterior.

    omega = (a, b) must sit strictly inside the window.  interior_idx holds
    the node indices with x_i in omega, exterior_idx the rest; the two sets
    partition range(N).
    """

    L: float
    N: int
    a: float
    b: float
    n: int = 1
    h: float = field(init=False)
    nodes: np.ndarray = field(init=False, repr=False)
    interior_idx: np.ndarray = field(init=False, repr=False)
    exterior_idx: np.ndarray = field(init=False, repr=False)
    cutoff: float = field(init=False)

    def __post_init__(self):
        if self.n != 1:
            raise ValueError("Grid: only n = 1 is supported")
        if self.N < 4:
            raise ValueError(f"Grid: need at least 4 nodes, got N={self.N}")
        if not self.L > 0:
            raise ValueError(f"Grid: window half-width L={self.L} must be > 0")
        if not (-self.L < self.a < self.b < self.L):
            raise ValueError(
                f"Grid: omega bounds ({self.a}, {self.b}) must satisfy "
                f"-L < a < b < L with L={self.L}"
            )
        nodes = np.linspace(-self.L, self.L, self.N)
        h = float(nodes[1] - nodes[0])
        inside = (nodes > self.a) & (nodes < self.b)
        interior = np.flatnonzero(inside)
        exterior = np.flatnonzero(~inside)
        if interior.size == 0:
            raise ValueError("Grid: omega contains no nodes")
        for name, val in (
            ("h", h),
            ("nodes", nodes),
            ("interior_idx", interior),
            ("exterior_idx", exterior),
            ("cutoff", self.L + h / 2.0),
        ):
            object.__setattr__(self, name, val)
        nodes.setflags(write=False)
        interior.setflags(write=False)
        exterior.setflags(write=False)

    @property
    def interior_mask(self) -> np.ndarray:
        m = np.zeros(self.N, dtype=bool)
        m[self.interior_idx] = True
        return m

    def zeros(self) -> np.ndarray:
        return np.zeros(self.N)


def kernel_weight(grid: Grid, fp: FracParams, i: int, j: int) -> float:
    """Quadrature weight C_{n,s} h^n / |x_i - x_j|^{n+2s} for an off-diagonal pair."""
    if i == j:
        raise ValueError("kernel_weight: i == j (singular diagonal)")
    d = abs(grid.nodes[i] - grid.nodes[j])
    return fp.cns * grid.h**grid.n / d ** (grid.n + 2.0 * fp.s)


def kernel_matrix(grid: Grid, fp: FracParams) -> np.ndarray:
    """Full (N, N) matrix of kernel weights, zero diagonal."""
    x = grid.nodes
    d = np.abs(x[:, None] - x[None, :])
    np.fill_diagonal(d, 1.0)  # placeholder, wiped below
    W = fp.cns * grid.h**grid.n * d ** -(grid.n + 2.0 * fp.s)
    np.fill_diagonal(W, 0.0)
    return W


def tail_weight(grid: Grid, fp: FracParams, i: int) -> float:
    """Exact kernel mass beyond the truncation radius, seen from node i.

    Closed form of C_{n,s} * integral of |y - x_i|^{-n-2s} over |y| > R with
    R = grid.cutoff = L + h/2 (fields vanish there by convention):

        C_{n,s}/(2s) [ (R - x_i)^{-2s} + (R + x_i)^{-2s} ]
    """
    x = grid.nodes[i]
    R = grid.cutoff
    if not -R < x < R:
        raise ValueError(f"tail_weight: node {i} not strictly inside the window")
    s = fp.s
    return fp.cns / (2.0 * s) * ((R - x) ** (-2.0 * s) + (R + x) ** (-2.0 * s))


def tail_vector(grid: Grid, fp: FracParams) -> np.ndarray:
    """tail_weight at every node."""
    x = grid.nodes
    R = grid.cutoff
    s = fp.s
    return fp.cns / (2.0 * s) * ((R - x) ** (-2.0 * s) + (R + x) ** (-2.0 * s))
