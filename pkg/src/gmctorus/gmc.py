"""Multiplicative cascade on the grid and Fourier coefficients of the resulting measure."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import LevelMismatch, ScaleUnresolvable
from .grid import GridSpec
from .kernel import get_kernels
from .sampler import check_gamma, lognormal_weight, sample_level


@dataclass
class MeasureState:
    """``mu_m`` as a density against normalised Haar measure on the grid cells."""

    level: int
    density: np.ndarray = field(repr=False)
    total_mass: float
    ledger: tuple = ()

    @classmethod
    def uniform(cls, grid):
        return cls(0, np.ones(grid.shape), 1.0, ())

    @property
    def grid(self):
        return GridSpec(self.density.ndim, self.density.shape[0])


def advance(state, weight):
    """Multiply the density by the next level's weight."""
    if weight.j != state.level + 1:
        raise LevelMismatch(f"weight level {weight.j} cannot follow measure level {state.level}")
    density = state.density * weight.values
    ledger = state.ledger + ((weight.j, weight.gamma, weight.variance),)
    return MeasureState(weight.j, density, float(density.mean()), ledger)


@dataclass
class SpectrumTable:
    """``mu^(n) = M^-d sum_t density(t) e(n . t)`` over the full lattice (FFT order).

    The transform carries no conjugate: ``e(n . t) = exp(+2 pi i n . t)``.
    """

    coefficients: np.ndarray = field(repr=False)
    grid: GridSpec
    convention: str = "no-conjugate"

    def __getitem__(self, n):
        return complex(self.coefficients[self.grid.frequency_index(n)])

    @property
    def power(self):
        return np.abs(self.coefficients) ** 2

    @property
    def aliasing_suspect(self):
        """Mask of frequencies with ``|n|_inf >= M/4``."""
        return self.grid.frequency_supnorm >= self.grid.M // 4

    def to_csv(self, path, include_aliased=False):
        grid = self.grid
        keep = np.ones(grid.shape, bool) if include_aliased else ~self.aliasing_suspect
        idx = np.argwhere(keep)
        freqs = np.where(idx < grid.M // 2, idx, idx - grid.M)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"n_{a}" for a in range(grid.d)] + ["abs_n", "re", "im", "power"])
            for k, n in zip(idx, freqs):
                c = self.coefficients[tuple(k)]
                w.writerow(list(n) + [repr(float(np.sqrt(np.sum(n * n)))), repr(c.real), repr(c.imag), repr(abs(c) ** 2)])


def spectrum(state):
    return SpectrumTable(np.fft.ifftn(state.density), state.grid)


def run_cascade(grid, gamma, levels, seed, replica=0, checkpoints=None, kernels=None, with_spectra=True):
    """Build ``mu_1 .. mu_levels`` for one replica.

    Returns ``(states, spectra)`` at the requested checkpoint levels (all
    levels ``0..levels`` by default). ``spectra`` is ``None`` when
    ``with_spectra`` is false.
    """
    check_gamma(gamma, grid.d)
    if levels > grid.j_max:
        raise ScaleUnresolvable(levels, grid.M)
    if kernels is None:
        kernels = get_kernels(levels, grid)
    wanted = set(range(levels + 1) if checkpoints is None else checkpoints)
    state = MeasureState.uniform(grid)
    states = [state] if 0 in wanted else []
    for j in range(1, levels + 1):
        psi = sample_level(kernels[j - 1], seed, replica)
        state = advance(state, lognormal_weight(psi, gamma, kernels[j - 1]))
        if j in wanted:
            states.append(state)
    spectra = [spectrum(s) for s in states] if with_spectra else None
    return states, spectra
