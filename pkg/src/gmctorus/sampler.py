"""Exact stationary Gaussian fields on the torus grid and their lognormal weights."""

import itertools
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import GammaOutOfRange, SchemaMismatch

DUMP_MAGIC = b"GMCF"
DUMP_VERSION = 1
_HEADER = struct.Struct("<4sIIII12x")


def field_rng(seed, replica=0, level=0):
    """Counter-based generator keyed by ``(seed, replica, level)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replica), int(level)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class FieldSample:
    j: int
    values: np.ndarray
    seed_path: tuple | None = None


@dataclass
class WeightField:
    """``X_j = exp(gamma psi_j - gamma^2 sigma_j^2 / 2)`` on the grid."""

    j: int
    values: np.ndarray
    variance: float
    gamma: float

    @property
    def centered(self):
        return self.values - 1.0


def sample_field(kernel, rng, seed_path=None):
    """Draw ``psi_j`` with covariance ``kernel.real_samples`` (circulant synthesis).

    White noise is filtered by ``sqrt(lambda)``; the real FFT pair keeps the
    coefficients Hermitian so the output is real by construction.
    """
    shape = kernel.grid.shape
    white = rng.standard_normal(shape)
    coeffs = np.fft.rfftn(white) * kernel.sqrt_half_spectrum
    values = np.fft.irfftn(coeffs, s=shape, axes=tuple(range(len(shape))))
    return FieldSample(kernel.j, values, seed_path)


def sample_level(kernel, seed, replica):
    """Field for one ``(seed, replica, level)`` triple."""
    return sample_field(kernel, field_rng(seed, replica, kernel.j), (int(seed), int(replica), kernel.j))


def _derivative_multipliers(shape, alpha, squared=False):
    """Per-axis factors ``(2 pi i n)^a`` on the real-FFT half lattice.

    For odd orders the Nyquist column is zeroed: its multiplier is not
    Hermitian-compatible and would leave an imaginary residue.
    """
    M = shape[0]
    d = len(shape)
    factors = []
    for axis, a in enumerate(alpha):
        n = np.fft.rfftfreq(M, 1.0 / M) if axis == d - 1 else np.fft.fftfreq(M, 1.0 / M)
        if squared:
            f = (2 * np.pi * n) ** (2 * a)
        else:
            f = (2j * np.pi * n) ** a
        if a % 2 == 1:
            f = f.copy()
            f[n == -M / 2] = 0
            f[n == M / 2] = 0
        view = [1] * d
        view[axis] = -1
        factors.append(np.reshape(f, view))
    return factors


def spectral_derivative(field, alpha):
    """``D^alpha`` of a grid field by Fourier multiplication."""
    values = field.values
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != values.ndim:
        raise ValueError(f"multi-index {alpha} does not match dimension {values.ndim}")
    if sum(alpha) > values.ndim:
        raise ValueError(f"|alpha| = {sum(alpha)} exceeds d = {values.ndim}")
    if not any(alpha):
        return FieldSample(field.j, values.copy(), field.seed_path)
    coeffs = np.fft.rfftn(values)
    for f in _derivative_multipliers(values.shape, alpha):
        coeffs = coeffs * f
    return FieldSample(field.j, np.fft.irfftn(coeffs, s=values.shape, axes=tuple(range(values.ndim))), field.seed_path)


def derivative_second_moment(kernel, alpha):
    """``E|D^alpha psi_j|^2`` at any point, exactly from the eigenvalues.

    Equals ``M^-d sum_n prod (2 pi n_l)^(2 alpha_l) lambda_n`` with the same
    Nyquist convention as :func:`spectral_derivative`.
    """
    grid = kernel.grid
    alpha = tuple(int(a) for a in alpha)
    lam = kernel.eigenvalues
    weight = np.ones(grid.shape)
    M = grid.M
    for axis, a in enumerate(alpha):
        n = np.fft.fftfreq(M, 1.0 / M)
        f = (2 * np.pi * n) ** (2 * a)
        if a % 2 == 1:
            f[n == -M / 2] = 0
        view = [1] * grid.d
        view[axis] = -1
        weight = weight * np.reshape(f, view)
    return float(np.sum(weight * lam) / grid.size)


def multi_indices(d, order):
    """All ``alpha`` in N^d with ``|alpha| = order``."""
    return [a for a in itertools.product(range(order + 1), repeat=d) if sum(a) == order]


def p4_ratios(kernels, min_level=3):
    """Derivative-moment ratios ``E|D^a psi_j|^2 / (j^(4|a|) 2^(2j|a|))`` for ``|a| <= d``.

    Also reports the ratio without the polynomial ``j^(4|a|)`` factor, which
    isolates the pure ``2^(2j|a|)`` scaling.
    """
    d = kernels[0].grid.d
    rows = {}
    for order in range(d + 1):
        for alpha in multi_indices(d, order):
            per_level = []
            for ker in kernels:
                j = ker.j
                m2 = derivative_second_moment(ker, alpha)
                per_level.append(
                    {
                        "j": j,
                        "moment": m2,
                        "ratio": m2 / (j ** (4 * order) * 2.0 ** (2 * j * order)),
                        "ratio_dyadic_only": m2 / 2.0 ** (2 * j * order),
                    }
                )
            checked = [r["ratio"] for r in per_level if r["j"] >= min_level]
            dyadic = [r["ratio_dyadic_only"] for r in per_level if r["j"] >= min_level]
            rows[",".join(map(str, alpha))] = {
                "order": order,
                "levels": per_level,
                "max_over_min": max(checked) / min(checked) if checked else None,
                "max_over_min_dyadic_only": max(dyadic) / min(dyadic) if dyadic else None,
            }
    return rows


# gammas this close to sqrt(2d) are treated as critical
CRITICAL_MARGIN = 1e-4


def check_gamma(gamma, d):
    if not (0.0 < gamma < math.sqrt(2 * d) - CRITICAL_MARGIN):
        raise GammaOutOfRange(gamma, d)


def lognormal_weight(field, gamma, kernel):
    """Mean-one lognormal weight using the exact grid variance."""
    check_gamma(gamma, kernel.grid.d)
    if field.j != kernel.j:
        raise ValueError(f"field level {field.j} != kernel level {kernel.j}")
    var = kernel.variance
    values = np.exp(gamma * field.values - 0.5 * gamma * gamma * var)
    return WeightField(kernel.j, values, var, float(gamma))


def write_field_dump(path, field, grid):
    """Raw little-endian float64 dump with a 32-byte header."""
    header = _HEADER.pack(DUMP_MAGIC, DUMP_VERSION, grid.d, grid.M, field.j)
    data = np.ascontiguousarray(field.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes(order="C"))


def read_field_dump(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, d, M, j = _HEADER.unpack_from(raw)
    if magic != DUMP_MAGIC:
        raise SchemaMismatch(f"{path}: not a field dump (magic {magic!r})")
    if version != DUMP_VERSION:
        raise SchemaMismatch(f"{path}: dump version {version} != {DUMP_VERSION}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if values.size != M**d:
        raise SchemaMismatch(f"{path}: expected {M**d} samples, found {values.size}")
    return FieldSample(j, values.reshape((M,) * d).astype(float)), (d, M)
