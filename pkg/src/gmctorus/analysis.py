"""Dimension estimates, Fourier-Lebesgue norms and the predicted dimension formula."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import GammaOutOfRange, InsufficientShells

CENSOR_FLOOR = 1e-20


def predicted_dimension(gamma, d):
    """``d - gamma^2`` below ``sqrt(2d)/2``, ``(sqrt(2d) - gamma)^2`` above."""
    crit = math.sqrt(2 * d)
    if not (0.0 < gamma < crit):
        raise GammaOutOfRange(gamma, d)
    if gamma < crit / 2:
        return d - gamma * gamma
    return (crit - gamma) ** 2


def dimension_branch(gamma, d):
    return "d-gamma^2" if gamma < math.sqrt(2 * d) / 2 else "(sqrt(2d)-gamma)^2"


def zeta(p, gamma, d):
    if not (1.0 <= p <= 2.0):
        raise ValueError(f"p must lie in [1, 2], got {p}")
    return 2 * d + gamma * gamma - (2 * d / p + p * gamma * gamma)


def zeta_argmax(gamma, d):
    """Maximiser of ``zeta`` over [1, 2]: the stationary point ``sqrt(2d)/gamma`` clipped to 2."""
    return min(2.0, math.sqrt(2 * d) / gamma)


def fl_window(gamma, d, tau=None):
    """Exponents ``(p, q)`` for the Fourier-Lebesgue moment check.

    ``p`` sits 0.05 below the maximiser of ``zeta``. The moment series
    converges when ``d p / q < slack`` with
    ``slack = (p-1) d - tau p/2 - p (p-1) gamma^2/2``; ``q`` is the smallest
    integer >= 2 clearing ``max(2, d p) / slack``. Returns ``q = None`` when
    no ``q`` works (``tau`` too large).
    """
    p = zeta_argmax(gamma, d) - 0.05
    tau_max = (p - 1) * d - p * (p - 1) * gamma * gamma / 2
    tau_max = 2 * tau_max / p
    out = {"p": p, "tau_max": tau_max, "tau": tau, "q": None, "slack": None}
    if tau is not None:
        slack = (p - 1) * d - tau * p / 2 - p * (p - 1) * gamma * gamma / 2
        out["slack"] = slack
        if slack > 0:
            out["q"] = max(2, math.ceil(max(2.0, d * p) / slack))
    return out


@dataclass
class ShellStats:
    """Per dyadic shell ``2^k <= |n| < 2^(k+1)``: sup and mean of ``|mu^(n)|^2``."""

    k: np.ndarray
    sup: np.ndarray
    mean: np.ndarray
    count: np.ndarray

    def as_dict(self):
        return {
            "k": self.k.tolist(),
            "sup": self.sup.tolist(),
            "mean": self.mean.tolist(),
            "count": self.count.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.asarray(d[key]) for key in ("k", "sup", "mean", "count")))


def shell_index(grid):
    """Shell number of every lattice point (-1 outside the usable shells or at n = 0)."""
    r = grid.frequency_norm
    kmax = int(math.log2(grid.M // 4)) - 1
    with np.errstate(divide="ignore"):
        k = np.floor(np.log2(np.where(r > 0, r, 1.0))).astype(int)
    # log2 of an exact power of two can land a hair below the integer
    k = np.where(2.0 ** (k + 1) <= r, k + 1, k)
    k = np.where(2.0**k > r, k - 1, k)
    valid = (r >= 1) & (k <= kmax)
    return np.where(valid, k, -1), kmax


def shell_stats(spec):
    """Shell statistics up to the aliasing guard ``|n| < M/4``."""
    idx, kmax = shell_index(spec.grid)
    power = spec.power
    ks = np.arange(kmax + 1)
    sup = np.zeros(ks.size)
    mean = np.zeros(ks.size)
    count = np.zeros(ks.size, dtype=np.int64)
    flat_idx = idx.ravel()
    flat_pow = power.ravel()
    sel = flat_idx >= 0
    count[:] = np.bincount(flat_idx[sel], minlength=ks.size)
    mean[:] = np.bincount(flat_idx[sel], weights=flat_pow[sel], minlength=ks.size) / count
    np.maximum.at(sup, flat_idx[sel], flat_pow[sel])
    return ShellStats(ks, sup, mean, count)


@dataclass
class DimEstimate:
    method: str
    slope: float
    dimension: float
    stderr: float
    shell_range: tuple
    replicas: int
    points: list = field(default_factory=list)

    def as_dict(self):
        return {
            "method": self.method,
            "slope": self.slope,
            "dimension": self.dimension,
            "stderr": self.stderr,
            "shell_range": list(self.shell_range),
            "replicas": self.replicas,
            "points": self.points,
        }


def _fit(method, x, y, d, replicas, sign=-1.0):
    """Regress ``y`` on ``x``; dimension is ``sign * slope`` clipped to [0, d]."""
    if len(x) < 3:
        raise InsufficientShells(f"{method}: {len(x)} usable points, need 3")
    fit = stats.linregress(x, y)
    dim = min(max(sign * fit.slope, 0.0), float(d)) + 0.0
    stderr = float(fit.stderr) if np.isfinite(fit.stderr) else 0.0
    return DimEstimate(
        method,
        float(fit.slope),
        float(dim),
        stderr,
        (int(x[0]), int(x[-1])),
        replicas,
        [{"k": int(a), "log2_value": float(b)} for a, b in zip(x, y)],
    )


def estimate_fourier_dim(ensemble, d, mode="sup", drop_low=2, shells=None, floor=CENSOR_FLOOR):
    """``-slope`` of log2(ensemble mean of per-replica shell statistic) against ``k``.

    ``shells=(lo, hi)`` overrides the default range (all shells from ``drop_low``).
    """
    if mode not in ("sup", "mean"):
        raise ValueError(f"mode must be 'sup' or 'mean', got {mode!r}")
    ensemble = list(ensemble)
    if not ensemble:
        raise InsufficientShells("empty ensemble")
    ks = ensemble[0].k
    values = np.mean([getattr(s, mode) for s in ensemble], axis=0)
    lo, hi = (drop_low, int(ks[-1])) if shells is None else shells
    keep = (ks >= lo) & (ks <= hi) & (values >= floor)
    x = ks[keep]
    y = np.log2(values[keep])
    return _fit(f"fourier_{mode}", x, y, d, len(ensemble))


def box_energies(density, ks):
    """``sum_I mu(I)^2`` over the ``2^(kd)`` dyadic cubes of side ``2^-k``."""
    density = np.asarray(density, dtype=float)
    d = density.ndim
    M = density.shape[0]
    cell = density / density.size
    out = []
    for k in ks:
        b = M >> k
        if b < 1 or (b << k) != M:
            raise ValueError(f"scale 2^-{k} does not tile a grid of size {M}")
        blocks = cell.reshape((1 << k, b) * d)
        masses = blocks.sum(axis=tuple(range(1, 2 * d, 2)))
        out.append(float(np.sum(masses * masses)))
    return np.array(out)


def correlation_scales(M, kmin=1, kmax=None):
    """Admissible cube scales ``2^-k >= 8/M``."""
    top = int(math.log2(M)) - 3
    if kmax is not None:
        top = min(top, kmax)
    return np.arange(kmin, top + 1)


def estimate_correlation_dim(energies, ks, d):
    """Fit ``sum mu(I)^2 ~ 2^(-k dim_2)`` to ensemble-averaged cube energies.

    ``energies`` has one row per replica, one column per entry of ``ks``.
    """
    energies = np.atleast_2d(np.asarray(energies, dtype=float))
    ks = np.asarray(ks)
    mean = energies.mean(axis=0)
    keep = mean > 0
    return _fit("correlation", ks[keep], np.log2(mean[keep]), d, energies.shape[0])


def fl_norm(spec, s, q):
    """``(sum_n <n>^(s q) |mu^(n)|^q)^(1/q)`` over the full grid lattice."""
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    bracket2 = 1.0 + spec.grid.frequency_norm**2
    terms = bracket2 ** (s * q / 2) * np.abs(spec.coefficients) ** q
    return float(np.sum(terms) ** (1.0 / q))


def fl_moment_trend(norms, p, levels=None):
    """Per-level ensemble means of ``||mu_m||^p`` and a boundedness verdict.

    ``norms`` has one row per level and one column per replica. The verdict
    is bounded when the mean over the last quarter of levels is at most twice
    the largest of the first three level means.
    """
    norms = np.atleast_2d(np.asarray(norms, dtype=float))
    L, N = norms.shape
    if levels is None:
        levels = list(range(1, L + 1))
    powered = norms**p
    means = powered.mean(axis=1)
    sems = powered.std(axis=1, ddof=1) / math.sqrt(N) if N > 1 else np.zeros(L)
    early = float(np.max(means[: min(3, L)]))
    tail_n = max(1, L // 4)
    late = float(np.mean(means[-tail_n:]))
    return {
        "p": p,
        "levels": [int(m) for m in levels],
        "means": means.tolist(),
        "stderr": sems.tolist(),
        "early_max": early,
        "late_mean": late,
        "late_over_early": late / early,
        "bounded": bool(late <= 2.0 * early),
    }
