"""Lattice geometry, finitely supported fields, and the five-point Laplacian.

Everything lives on the square lattice Z^2.  The discrete Laplacian is

    (L u)(xi) = u(xi+e1) + u(xi-e1) + u(xi+e2) + u(xi-e2) - 4 u(xi)

and its Fourier symbol (of -L) is phi(s) = 4 - 2 cos s1 - 2 cos s2 with
range [0, 8].  Fields are stored densely on a centered square window;
lookups outside the window are exactly zero.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np


class Site(NamedTuple):
    """A lattice point (xi1, xi2) in Z^2."""

    xi1: int
    xi2: int


@dataclass(frozen=True)
class SupportSquare:
    """Centered square {xi : |xi_i| <= m}; holds N = (2m+1)^2 points."""

    m: int

    def __post_init__(self):
        if self.m < 0 or int(self.m) != self.m:
            raise ValueError(f"half-width must be a nonnegative integer, got {self.m}")

    @property
    def n_points(self) -> int:
        return (2 * self.m + 1) ** 2

    def __contains__(self, xi) -> bool:
        return abs(xi[0]) <= self.m and abs(xi[1]) <= self.m

    def sites(self) -> Iterator[Site]:
        """Canonical row-major order: xi2 runs -m..m outer, xi1 -m..m inner."""
        for xi2 in range(-self.m, self.m + 1):
            for xi1 in range(-self.m, self.m + 1):
                yield Site(xi1, xi2)

    def site_index(self, xi) -> int:
        if xi not in self:
            raise KeyError(f"site {xi} outside square m={self.m}")
        return (xi[1] + self.m) * (2 * self.m + 1) + (xi[0] + self.m)


class WindowTooSmallError(ValueError):
    """Raised when a stencil needs neighbors outside the evaluable window."""


@dataclass(frozen=True)
class LatticeField:
    """Finitely supported complex field on Z^2.

    Values are stored densely on the window |xi_i| <= m, indexed
    values[xi2+m, xi1+m]; everything outside is exactly zero.  ``is_real``
    records that the imaginary part vanished on construction (potentials and
    initial data in the wave problem are real valued).
    """

    m: int
    values: np.ndarray
    is_real: bool = field(default=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        n = 2 * self.m + 1
        if v.shape != (n, n):
            raise ValueError(f"values must have shape {(n, n)}, got {v.shape}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "is_real", bool(np.all(v.imag == 0.0)))
        v.setflags(write=False)

    # -- constructors -------------------------------------------------------

    @classmethod
    def zero(cls, m: int = 0) -> "LatticeField":
        return cls(m, np.zeros((2 * m + 1, 2 * m + 1)))

    @classmethod
    def delta(cls, amplitude: complex = 1.0, m: int = 0) -> "LatticeField":
        v = np.zeros((2 * m + 1, 2 * m + 1), dtype=complex)
        v[m, m] = amplitude
        return cls(m, v)

    @classmethod
    def single_site(cls, amplitude: complex) -> "LatticeField":
        return cls.delta(amplitude, m=0)

    @classmethod
    def from_sites(cls, entries: dict, m: int) -> "LatticeField":
        v = np.zeros((2 * m + 1, 2 * m + 1), dtype=complex)
        for xi, val in entries.items():
            v[xi[1] + m, xi[0] + m] = val
        return cls(m, v)

    @classmethod
    def random(cls, seed: int, amplitude: float, m: int) -> "LatticeField":
        """Seeded random real field, uniform on [-amplitude, amplitude].

        Uses the 64-bit linear congruential generator documented in the
        README (multiplier 6364136223846793005, increment 1442695040888963407,
        modulus 2^64, top 53 bits -> [0,1)), so the sequence is reproducible
        bit-exactly in any language.  Sites are filled in canonical row-major
        order.
        """
        gen = lcg64(seed)
        n = 2 * m + 1
        v = np.zeros((n, n), dtype=complex)
        for xi2 in range(n):
            for xi1 in range(n):
                v[xi2, xi1] = amplitude * (2.0 * next(gen) - 1.0)
        return cls(m, v)

    # -- access -------------------------------------------------------------

    @property
    def support(self) -> SupportSquare:
        return SupportSquare(self.m)

    def __call__(self, xi) -> complex:
        if abs(xi[0]) > self.m or abs(xi[1]) > self.m:
            return 0.0 + 0.0j
        return complex(self.values[xi[1] + self.m, xi[0] + self.m])

    def as_vector(self) -> np.ndarray:
        """Values over the window in canonical row-major site order."""
        return self.values.reshape(-1).copy()

    def embedded(self, m: int) -> "LatticeField":
        """Same field viewed on a larger window."""
        if m < self.m:
            raise ValueError(f"cannot shrink window from m={self.m} to m={m}")
        if m == self.m:
            return self
        pad = m - self.m
        v = np.pad(self.values, pad)
        return LatticeField(m, v)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def min_real(self) -> float:
        return float(np.min(self.values.real))

    def max_real(self) -> float:
        return float(np.max(self.values.real))

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        flat = self.values.reshape(-1)
        return {"m": self.m, "values": [[float(z.real), float(z.imag)] for z in flat]}

    @classmethod
    def from_dict(cls, d: dict) -> "LatticeField":
        m = int(d["m"])
        n = 2 * m + 1
        vals = np.array([complex(re, im) for re, im in d["values"]])
        if vals.size != n * n:
            raise ValueError(f"expected {n * n} values for m={m}, got {vals.size}")
        return cls(m, vals.reshape(n, n))

    def content_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def lcg64(seed: int) -> Iterator[float]:
    """64-bit LCG stream of floats in [0, 1); see LatticeField.random."""
    state = seed & 0xFFFFFFFFFFFFFFFF
    while True:
        state = (6364136223846793005 * state + 1442695040888963407) & 0xFFFFFFFFFFFFFFFF
        yield (state >> 11) * 2.0 ** -53


def symbol_eval(sigma1, sigma2):
    """Fourier symbol phi(s) = 4 - 2 cos s1 - 2 cos s2 of minus the Laplacian.

    Vectorized; range over the closed torus is exactly [0, 8] with the
    minimum at (0,0), the maximum at (pi,pi), and value 4 on the saddle
    curve through (0,pi) and (pi,0).
    """
    return 4.0 - 2.0 * np.cos(sigma1) - 2.0 * np.cos(sigma2)


def laplacian_window(arr: np.ndarray) -> np.ndarray:
    """Five-point Laplacian of a dense window; output shrinks by one ring.

    The stencil at the outermost ring would need neighbors outside the
    evaluable region, which is a contract violation: arrays smaller than
    3x3 are rejected explicitly.
    """
    a = np.asarray(arr)
    if a.ndim != 2 or a.shape[0] < 3 or a.shape[1] < 3:
        raise WindowTooSmallError(
            f"need at least a 3x3 window to form the stencil, got {a.shape}"
        )
    return (
        a[1:-1, 2:] + a[1:-1, :-2] + a[2:, 1:-1] + a[:-2, 1:-1] - 4.0 * a[1:-1, 1:-1]
    )


def laplacian_apply(u: LatticeField) -> LatticeField:
    """Laplacian of a finitely supported field (support grows by one site)."""
    padded = np.pad(u.values, 2)
    return LatticeField(u.m + 1, laplacian_window(padded))


def gradient_squared_sum(arr: np.ndarray) -> float:
    """Sum of |forward difference|^2 over both directions.

    For a field vanishing at the array edge this equals the quadratic form
    sum_xi (-L u) conj(u) of the (negative) Laplacian.
    """
    a = np.asarray(arr)
    dx = a[:, 1:] - a[:, :-1]
    dy = a[1:, :] - a[:-1, :]
    return float(np.sum(np.abs(dx) ** 2) + np.sum(np.abs(dy) ** 2))


def parse_field_spec(spec, kind: str = "potential") -> LatticeField:
    """Parse the preset grammar shared by the CLI and tests.

    Accepted forms: "zero", "single-site:V", "random:seed,amplitude,m",
    or an inline dict with the LatticeField JSON schema.
    """
    if isinstance(spec, dict):
        return LatticeField.from_dict(spec)
    if not isinstance(spec, str):
        raise ValueError(f"bad {kind} spec: {spec!r}")
    if spec == "zero":
        return LatticeField.zero(0)
    if spec.startswith("single-site:"):
        return LatticeField.single_site(float(spec.split(":", 1)[1]))
    if spec.startswith("random:"):
        parts = spec.split(":", 1)[1].split(",")
        if len(parts) != 3:
            raise ValueError(f"random spec needs seed,amplitude,m: {spec!r}")
        return LatticeField.random(int(parts[0]), float(parts[1]), int(parts[2]))
    raise ValueError(f"unknown {kind} preset: {spec!r}")
