"""Discretisation of the d-torus as a uniform M^d grid."""

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on [-1/2, 1/2)^d with ``M`` points per axis.

    Grid point ``k`` (a multi-index in ``{0..M-1}^d``) sits at ``t = k / M`` taken
    modulo 1, so index arrays use FFT ordering throughout: offsets and
    frequencies with index ``k >= M/2`` are read as ``k - M``.
    """

    d: int
    M: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if self.M < 8 or self.M & (self.M - 1):
            raise ValueError(f"M must be a power of two >= 8, got {self.M}")

    @property
    def log2M(self):
        return self.M.bit_length() - 1

    @property
    def spacing(self):
        return 1.0 / self.M

    @property
    def shape(self):
        return (self.M,) * self.d

    @property
    def size(self):
        return self.M**self.d

    @property
    def j_max(self):
        """Deepest cascade level whose kernel support spans at least 8 cells."""
        return self.log2M - 3

    def axis_offsets(self):
        """Wrapped coordinates ``k/M`` in [-1/2, 1/2) for one axis, FFT order."""
        k = np.arange(self.M)
        return np.where(k < self.M // 2, k, k - self.M) / self.M

    def axis_frequencies(self):
        return np.fft.fftfreq(self.M, 1.0 / self.M).astype(np.int64)

    def offsets(self):
        """Per-axis coordinate arrays (sparse meshgrid) in FFT order."""
        a = self.axis_offsets()
        return np.meshgrid(*([a] * self.d), indexing="ij", sparse=True)

    def frequencies(self):
        n = self.axis_frequencies()
        return np.meshgrid(*([n] * self.d), indexing="ij", sparse=True)

    @cached_property
    def torus_distance(self):
        """Distance of every grid offset from the identity, shape ``(M,)*d``."""
        return np.sqrt(sum(c * c for c in self.offsets()))

    @cached_property
    def frequency_norm(self):
        return np.sqrt(sum((n * n).astype(float) for n in self.frequencies()))

    @cached_property
    def frequency_supnorm(self):
        out = np.zeros(self.shape, dtype=np.int64)
        for n in self.frequencies():
            out = np.maximum(out, np.abs(n))
        return out

    def frequency_index(self, n):
        """Array index of lattice frequency ``n`` (tuple of ints) in FFT order."""
        n = tuple(int(x) for x in np.atleast_1d(n))
        if len(n) != self.d:
            raise ValueError(f"frequency {n} does not have {self.d} components")
        return tuple(x % self.M for x in n)
