"""Smooth dyadic partitions of unity on the torus and window-localised Fourier coefficients."""

import csv
import functools
import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import CertificationFailed, LevelMismatch, ScaleUnresolvable
from .gmc import spectrum
from .sampler import multi_indices


def vartheta(t):
    """``exp(-1/(1-t^2))`` on (-1, 1), zero elsewhere."""
    t = np.asarray(t, dtype=float)
    inside = np.abs(t) < 1.0
    out = np.zeros(t.shape)
    ti = t[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ti * ti))
    return out


def _periodic_sum(t):
    # at most three integer translates of vartheta overlap any point
    t = np.asarray(t, dtype=float)
    base = np.floor(t)
    return sum(vartheta(t - (base + h)) for h in (-1.0, 0.0, 1.0, 2.0))


def theta(t):
    """Normalised window ``vartheta / sum_h vartheta(. - h)``: its integer translates sum to 1."""
    return vartheta(t) / _periodic_sum(t)


@dataclass(frozen=True)
class Window1D:
    """The one-dimensional window with its sampled partition-of-unity certificate."""

    oversample: int
    max_partition_error: float

    def __call__(self, t):
        return theta(t)


def build_theta(oversample=4096):
    """Return the window and certify ``theta(t) + theta(t - 1) = 1`` on [0, 1]."""
    t = np.linspace(0.0, 1.0, oversample + 1)
    err = float(np.max(np.abs(theta(t) + theta(t - 1.0) - 1.0)))
    if err > 1e-14:
        raise CertificationFailed(f"window translates sum to 1 only within {err:.2e}")
    return Window1D(oversample, err)


@dataclass
class PouFamily:
    """Windows ``phi_I(t) = phi_k(t - c_I)`` for the ``2^(kd)`` dyadic cubes of side ``2^-k``.

    ``half_width`` is the window half-width ``M 2^-k`` in grid cells, and
    ``center_index`` holds each cube centre as an integer grid index per axis.
    """

    k: int
    grid: object
    axis_window: np.ndarray = field(repr=False)
    half_width: int
    center_index: np.ndarray = field(repr=False)
    certificate: dict = field(default_factory=dict)

    @property
    def base(self):
        """``phi_k`` sampled on the full grid (FFT order, centred at the origin)."""
        out = self.axis_window
        for _ in range(self.grid.d - 1):
            out = np.multiply.outer(out, self.axis_window)
        return out

    @property
    def centers(self):
        """Cube centres ``2^-k (h + 1/2)`` as points of [-1/2, 1/2)^d."""
        c = self.center_index / self.grid.M
        return np.where(c >= 0.5, c - 1.0, c)

    @property
    def patch_offsets(self):
        S = self.half_width
        return np.arange(-S + 1, S)

    @property
    def patch_window(self):
        """One-axis window over the patch offsets ``-S+1 .. S-1``."""
        return self.axis_window[self.patch_offsets % self.grid.M]

    def window(self, cube):
        """``phi_I`` on the full grid for cube number ``cube``."""
        return np.roll(self.base, tuple(self.center_index[cube]), axis=tuple(range(self.grid.d)))


def _axis_centers(k, M):
    S = M >> k
    h = np.arange(-(1 << (k - 1)), 1 << (k - 1))
    return (S * h + S // 2) % M


def build_pou(k, grid):
    """Scale-``k`` partition of unity on ``grid`` with its certificates."""
    if k < 1 or 2.0**-k < 8.0 / grid.M:
        raise ScaleUnresolvable(k, grid.M, what="partition scale")
    M, d = grid.M, grid.d
    S = M >> k
    axis_window = theta(grid.axis_offsets() * 2.0**k)
    axis_c = _axis_centers(k, M)
    centers = np.array(list(itertools.product(axis_c, repeat=d)), dtype=np.int64)
    fam = PouFamily(k, grid, axis_window, S, centers)
    fam.certificate = pou_certificate(fam)
    if not fam.certificate["passed"]:
        failing = [n for n, ok in fam.certificate["checks"].items() if not ok]
        raise CertificationFailed(f"partition of unity at scale {k}: {', '.join(failing)}")
    return fam


def pou_certificate(fam):
    grid = fam.grid
    M, d = grid.M, grid.d
    # the windows are tensor products, so the full sum is the product of axis sums
    axis_sum = np.zeros(M)
    for c in _axis_centers(fam.k, M):
        axis_sum += np.roll(fam.axis_window, c)
    full = functools.reduce(np.multiply.outer, [axis_sum] * d)
    partition_error = float(np.max(np.abs(full - 1.0)))
    outside = np.abs(grid.axis_offsets()) >= 2.0**-fam.k
    support_leak = float(np.max(np.abs(fam.axis_window[outside]))) if outside.any() else 0.0

    base = fam.base
    coeffs = np.fft.fftn(base)
    n = grid.axis_frequencies()
    ratios = {}
    for order in range(3):
        worst = 0.0
        for alpha in multi_indices(d, order):
            c = coeffs
            for axis, a in enumerate(alpha):
                view = [1] * d
                view[axis] = -1
                c = c * np.reshape((2j * np.pi * n) ** a, view)
            worst = max(worst, float(np.max(np.abs(np.fft.ifftn(c).real))))
        ratios[order] = worst / 2.0 ** (fam.k * order)
    checks = {
        "partition_of_unity": partition_error <= 1e-12,
        "support": support_leak == 0.0,
    }
    return {
        "k": fam.k,
        "cubes": int(fam.center_index.shape[0]),
        "partition_error": partition_error,
        "support_leak": support_leak,
        "derivative_ratios": {str(o): r for o, r in ratios.items()},
        "checks": checks,
        "passed": all(checks.values()),
    }


def derivative_ratio_spread(families):
    """Relative spread ``max/min - 1`` of each derivative-scaling ratio across scales."""
    out = {}
    for order in ("0", "1", "2"):
        vals = [f.certificate["derivative_ratios"][order] for f in families]
        out[order] = max(vals) / min(vals) - 1.0
    return out


def bracket(n):
    n = np.atleast_2d(np.asarray(n, dtype=float))
    return np.sqrt(1.0 + np.sum(n * n, axis=1))


@dataclass
class LocalizedCoeffs:
    """Coefficients for every cube (rows) at every tracked frequency (columns)."""

    k: int
    tau: float
    tracked_n: np.ndarray
    center_index: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def lq_norms(self, q):
        """``l^q`` norm over tracked frequencies, one per cube."""
        return np.sum(np.abs(self.values) ** q, axis=1) ** (1.0 / q)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            d = self.tracked_n.shape[1]
            w.writerow(["k", "cube"] + [f"n_{a}" for a in range(d)] + ["re", "im"])
            for i in range(self.values.shape[0]):
                for col, n in enumerate(self.tracked_n):
                    v = self.values[i, col]
                    w.writerow([self.k, i] + [int(x) for x in n] + [repr(v.real), repr(v.imag)])


def _increment_field(prev, weight):
    return prev.density * (weight.values - 1.0)


def _patches(field_, fam):
    """Field values on each cube's window patch, shape ``(cubes, P, ..., P)``."""
    M, d = fam.grid.M, fam.grid.d
    offs = fam.patch_offsets
    axis_c = _axis_centers(fam.k, M)
    idx = (axis_c[:, None] + offs[None, :]) % M
    nc, P = idx.shape
    index = []
    for axis in range(d):
        index.append(idx.reshape([nc if a == axis else 1 for a in range(d)] + [P if a == axis else 1 for a in range(d)]))
    block = field_[tuple(index)]
    return block.reshape((nc**d,) + (P,) * d)


def localized_coeffs(prev, weight, pou, tau, tracked_n):
    """Window-localised increment coefficients ``<n>^(tau/2) M^-d sum_t phi_I (mu_(k-1)) (X_k - 1) e(n.t)``."""
    if weight.j != prev.level + 1:
        raise LevelMismatch(f"weight level {weight.j} cannot follow measure level {prev.level}")
    if pou.k != weight.j:
        raise LevelMismatch(f"partition scale {pou.k} != weight level {weight.j}")
    grid = pou.grid
    M, d = grid.M, grid.d
    tracked_n = np.atleast_2d(np.asarray(tracked_n, dtype=np.int64))
    F = _increment_field(prev, weight)
    T = _patches(F, pou)
    w1 = pou.patch_window
    for axis in range(d):
        view = [1] * (d + 1)
        view[axis + 1] = -1
        T = T * w1.reshape(view)
    offs = pou.patch_offsets
    # contract one axis at a time against e(n_l o_l / M)
    for axis in range(d):
        E = np.exp(2j * np.pi * np.outer(offs, tracked_n[:, axis]) / M)
        if axis == 0:
            T = np.tensordot(T, E, axes=([1], [0]))
        else:
            T = np.einsum("ia...n,an->i...n", T, E)
    centers = pou.center_index
    phase = np.exp(2j * np.pi * (centers @ tracked_n.T) / M)
    values = T * phase * (bracket(tracked_n) ** (tau / 2))[None, :] / grid.size
    return LocalizedCoeffs(pou.k, float(tau), tracked_n, centers, values)


def localized_coeff_direct(prev, weight, pou, tau, cube, n):
    """One coefficient by a full-grid sum (reference evaluation)."""
    grid = pou.grid
    F = _increment_field(prev, weight) * pou.window(cube)
    idx = np.indices(grid.shape)
    n = np.asarray(n, dtype=np.int64)
    phase = np.exp(2j * np.pi * sum(n[a] * idx[a] for a in range(grid.d)) / grid.M)
    return complex(bracket(n)[0] ** (tau / 2) * np.sum(F * phase) / grid.size)


def default_tracked_frequencies(grid):
    """Lattice points of smallest and largest norm in every usable shell."""
    from .analysis import shell_index

    shells, kmax = shell_index(grid)
    r2 = sum((n * n) for n in grid.frequencies())
    r2 = np.broadcast_to(r2, grid.shape)
    freq = np.stack([np.broadcast_to(n, grid.shape) for n in grid.frequencies()], axis=-1)
    out = []
    for k in range(kmax + 1):
        mask = shells == k
        vals = r2[mask]
        pts = freq[mask]
        for target in (vals.min(), vals.max()):
            out.extend(sorted(map(tuple, pts[vals == target])))
    return np.array(out, dtype=np.int64)


def decoupling_check(coeffs, prev, new_state, tol=1e-10):
    """Compare ``sum_I`` of the coefficients with ``<n>^(tau/2) (mu^_k(n) - mu^_(k-1)(n))``."""
    lhs = coeffs.values.sum(axis=0)
    s_new = spectrum(new_state)
    s_old = spectrum(prev)
    idx = tuple((coeffs.tracked_n % s_new.grid.M).T)
    rhs = bracket(coeffs.tracked_n) ** (coeffs.tau / 2) * (s_new.coefficients[idx] - s_old.coefficients[idx])
    rel = np.abs(lhs - rhs) / np.maximum(np.abs(rhs), 1e-300)
    return {
        "k": coeffs.k,
        "tau": coeffs.tau,
        "max_relative_error": float(rel.max()),
        "tolerance": tol,
        "passed": bool(rel.max() <= tol),
        "rows": [
            {"n": [int(x) for x in n], "sum_local": [l.real, l.imag], "increment": [r.real, r.imag], "rel_error": float(e)}
            for n, l, r, e in zip(coeffs.tracked_n, lhs, rhs, rel)
        ],
    }


def localized_l2_norms(prev, weight, pou, tau, cubes):
    """``sum_n <n>^tau |D_I(n)|^2`` over the full grid lattice for the listed cubes."""
    grid = pou.grid
    F = _increment_field(prev, weight)
    w = (1.0 + grid.frequency_norm**2) ** (tau / 2)
    out = []
    for c in cubes:
        g = np.fft.fftn(F * pou.window(c)) / grid.size
        out.append(float(np.sum(w * np.abs(g) ** 2)))
    return np.array(out)


def l2_scaling_report(ks, means, d, tau, gamma, slack=0.2, drop_low=2):
    """Slope of log2 of the mean squared localized norm per level.

    The bound for a single cube carries the moment factor ``prod_j E[X_j^2]``
    which grows like ``2^(k gamma^2)``; the reference slope is therefore
    ``-(d - tau - gamma^2)``. The ``drop_low`` coarsest levels are left out of
    the fit (pre-asymptotic, as for the shell regressions).
    """
    ks = np.asarray(ks, dtype=float)
    logs = np.log2(np.asarray(means, dtype=float))
    use = slice(drop_low, None) if ks.size - drop_low >= 3 else slice(None)
    fit = stats.linregress(ks[use], logs[use])
    reference = -(d - tau - gamma * gamma)
    return {
        "k": ks.tolist(),
        "log2_mean": logs.tolist(),
        "fit_k": ks[use].tolist(),
        "slope": float(fit.slope),
        "stderr": float(fit.stderr),
        "reference_slope": reference,
        "slack": slack,
        "passed": bool(fit.slope <= reference + slack),
    }


def dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True)
