"""Scale kernels of the log-correlated field on the torus.

The construction follows a fixed chain:

* ``Phi``: normalised autocorrelation of the bump ``exp(-1/(1-(2r)^2))`` on
  ``B(0, 1/2)``. It is smooth, non-negative, isotropic, positive definite and
  supported in ``B(0, 1)``.
* ``L_j(t) = int_1^2 Phi(2^j u t) du / u``, supported in ``B(0, 2^-j)``.
* ``H_j``: ``L_j`` read on the torus through the fundamental cube.
* ``K_j = H_j * P_j * P~_j`` with ``P_j`` the mollifier ``Q`` rescaled by
  ``eps_j = j^-2 2^-j``.

``K_j`` is sampled exactly on the grid by a real-space quadrature
(:func:`build_K_exact`). :func:`build_K_spectral` computes it by a
frequency-domain product instead, which is only exact while the spectrum of
``H_j`` is negligible at the grid Nyquist frequency.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy import integrate, special

from ._radial import ChebTable, bump, gauss_legendre, sphere_area
from .errors import (
    CertificationFailed,
    ClampBudgetExceeded,
    QuadratureUnstable,
    ScaleUnresolvable,
)
from .grid import GridSpec

LOG2 = math.log(2.0)

# seed bump for both Phi (via autocorrelation) and Q
SEED_RADIUS = 0.5

CLAMP_INVARIANT = 1e-8
CLAMP_BUDGET = 1e-6
PD_TOLERANCE = 1e-10
# Chebyshev panels for the radial K_j tables (reaches ~1e-15)
KERNEL_PANELS = 24


def epsilon(j):
    """Mollifier scale ``j^-2 2^-j``."""
    return 1.0 / (j * j * 2.0**j)


def _seed(r):
    return bump(r, SEED_RADIUS)


def bump_autocorrelation(r, d, nodes=96):
    """Unnormalised autocorrelation ``int chi(x) chi(x - r e_1) dx`` of the seed bump in R^d.

    Brute-force Gauss-Legendre quadrature over the lens where both bumps are
    non-zero; ``d >= 2`` is reduced to the axial coordinate and the distance
    from the axis.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    out = np.zeros(r.shape)
    R = SEED_RADIUS
    inside = r < 2 * R
    rr = r[inside]
    if rr.size == 0:
        return out
    if d == 1:
        x, w = gauss_legendre(nodes)
        a = rr - R
        half = 0.5 * (R - a)
        xs = a[:, None] + half[:, None] * (x[None, :] + 1.0)
        out[inside] = np.sum(half[:, None] * w * _seed(xs) * _seed(xs - rr[:, None]), axis=1)
        return out

    S = sphere_area(d - 2)
    x, w = gauss_legendre(nodes)
    vals = np.zeros(rr.shape)
    chunk = max(1, 2_000_000 // (nodes * nodes))
    for lo in range(0, rr.size, chunk):
        rc = rr[lo : lo + chunk][:, None, None]
        total = 0.0
        # split the axial range at the lens mid-plane, where the binding sphere switches
        for a, b in ((rc - R, rc / 2), (rc / 2, R + 0 * rc)):
            hx = 0.5 * (b - a)
            x1 = a + hx * (x[None, :, None] + 1.0)
            far = np.maximum(x1 * x1, (x1 - rc) ** 2)
            rho_max = np.sqrt(np.maximum(R * R - far, 0.0))
            rho = 0.5 * rho_max * (x[None, None, :] + 1.0)
            integrand = (
                rho ** (d - 2)
                * _seed(np.sqrt(x1 * x1 + rho * rho))
                * _seed(np.sqrt((x1 - rc) ** 2 + rho * rho))
            )
            inner = 0.5 * rho_max[..., 0] * np.sum(w[None, None, :] * integrand, axis=2)
            total = total + np.sum(hx[..., 0] * w[None, :] * inner, axis=1)
        vals[lo : lo + chunk] = S * total
    out[inside] = vals
    return out


def _radial_integral(f, radius, d, nodes=200):
    """``int_{B(0,radius)} f(|x|) dx`` by radial Gauss-Legendre quadrature."""
    s, w = gauss_legendre(nodes, 0.0, radius)
    return sphere_area(d - 1) * float(np.sum(w * f(s) * s ** (d - 1)))


@dataclass(frozen=True)
class RadialProfile:
    """Smooth isotropic compactly supported profile (``phi`` or ``q``).

    ``normalization`` is ``Phi(0)`` for ``phi`` and ``int Q`` for ``q``.
    ``integral`` is the integral over R^d in both cases.
    """

    kind: str
    d: int
    support_radius: float
    normalization: float
    integral: float
    lipschitz_quadratic_constant: float | None
    oversample: int
    evaluator: object = field(repr=False, compare=False)
    log_tail: object = field(default=None, repr=False, compare=False)
    transform: object = field(default=None, repr=False, compare=False)

    def __call__(self, r):
        return self.evaluator(r)


def _phi_table(d, oversample, nodes):
    a0 = bump_autocorrelation(0.0, d, nodes)[0]
    return ChebTable(lambda r: bump_autocorrelation(r, d, nodes) / a0, 2 * SEED_RADIUS, panels=oversample)


@lru_cache(maxsize=None)
def build_profile_phi(d=1, oversample=64):
    """Tabulate ``Phi`` in dimension ``d`` and certify it.

    ``oversample`` is the number of Chebyshev panels on the radial support.
    """
    if oversample < 64:
        raise ValueError(f"oversample must be >= 64, got {oversample}")
    nodes = 96 if d > 1 else 128
    table = _phi_table(d, oversample, nodes)

    # convergence of the lens quadrature: doubling the node count must not move Phi
    probe = np.linspace(0.0, 0.95, 7)
    fine = bump_autocorrelation(probe, d, 2 * nodes) / bump_autocorrelation(0.0, d, 2 * nodes)[0]
    drift = float(np.max(np.abs(fine - table(probe))))
    if drift > 1e-10:
        raise QuadratureUnstable(f"Phi quadrature drift {drift:.2e} exceeds 1e-10 (d={d})")

    integral = _radial_integral(table, 1.0, d)
    # the integral of an autocorrelation is (int chi)^2 / chi*chi(0)
    seed_int = _radial_integral(_seed, SEED_RADIUS, d)
    expected = seed_int**2 / bump_autocorrelation(0.0, d, 2 * nodes)[0]
    if abs(integral - expected) > 1e-10 * expected:
        raise QuadratureUnstable(f"int Phi = {integral!r} disagrees with (int chi)^2/|chi|^2 = {expected!r}")

    s = np.linspace(1e-3, 1.0, 4001)
    c_phi = float(np.max((1.0 - table(s)) / s**2))

    # (1 - Phi(s)) / s is smooth on [0, 1]; its tail integral turns L_j into two table lookups
    x_g, w_g = gauss_legendre(64)

    def tail(x):
        x = np.asarray(x, dtype=float)[..., None]
        half = 0.5 * (1.0 - x)
        s_ = x + half * (x_g + 1.0)
        return np.sum(half * w_g * (1.0 - table(s_)) / s_, axis=-1)

    log_tail = ChebTable(tail, 1.0, panels=oversample)
    profile = RadialProfile(
        kind="phi",
        d=d,
        support_radius=1.0,
        normalization=float(table(0.0)),
        integral=integral,
        lipschitz_quadratic_constant=c_phi,
        oversample=oversample,
        evaluator=table,
        log_tail=log_tail,
    )
    certify_profile(profile)
    return profile


def spherical_average(z, d):
    """Average of ``exp(i z x_1)`` over the unit sphere in R^d (``Gamma(d/2)(2/z)^nu J_nu(z)``)."""
    z = np.asarray(z, dtype=float)
    nu = d / 2.0 - 1.0
    small = np.abs(z) < 1e-6
    zs = np.where(small, 1.0, z)
    out = special.gamma(d / 2.0) * (2.0 / zs) ** nu * special.jv(nu, zs)
    return np.where(small, 1.0 - z * z / (2.0 * d), out)


def _q_transform_direct(rho, d, norm, nodes=400):
    """Continuous Fourier transform of ``Q`` at radial frequency ``rho``."""
    s, w = gauss_legendre(nodes, 0.0, SEED_RADIUS)
    rho = np.asarray(rho, dtype=float)
    q = _seed(s) / norm
    vals = spherical_average(2 * np.pi * rho[..., None] * s, d)
    return sphere_area(d - 1) * np.sum(w * q * s ** (d - 1) * vals, axis=-1)


@lru_cache(maxsize=None)
def build_profile_q(d=1, oversample=64):
    """Mollifier profile: the seed bump normalised to unit integral."""
    if oversample < 64:
        raise ValueError(f"oversample must be >= 64, got {oversample}")
    norm = _radial_integral(_seed, SEED_RADIUS, d, nodes=400)

    def q(r):
        return _seed(r) / norm

    # the transform decays faster than any power; past rho_cut its square is below 1e-26
    rho_cut = 400.0
    transform = ChebTable(lambda rho: _q_transform_direct(rho, d, norm), rho_cut, panels=8 * oversample)
    profile = RadialProfile(
        kind="q",
        d=d,
        support_radius=SEED_RADIUS,
        normalization=_radial_integral(q, SEED_RADIUS, d, nodes=400),
        integral=_radial_integral(q, SEED_RADIUS, d, nodes=400),
        lipschitz_quadratic_constant=None,
        oversample=oversample,
        evaluator=q,
        transform=transform,
    )
    certify_profile(profile)
    return profile


def certify_profile(profile):
    """Check the invariants of a :class:`RadialProfile`; raise on failure."""
    r_out = np.linspace(profile.support_radius, profile.support_radius + 1.0, 257)
    if np.any(profile(r_out) != 0.0):
        raise CertificationFailed(f"{profile.kind}: non-zero outside support radius")
    r_in = np.linspace(0.0, profile.support_radius, 2049)
    if profile.kind == "phi":
        if abs(profile(0.0) - 1.0) > 1e-12:
            raise CertificationFailed(f"phi(0) = {profile(0.0)!r} != 1")
        if np.min(profile(r_in)) < -1e-14:
            raise CertificationFailed("phi takes negative values")
        lam = _pd_spectrum(profile)
        if lam.min() < -PD_TOLERANCE * lam.max():
            raise CertificationFailed("phi is not positive definite", float(lam.min() / lam.max()))
    else:
        # independent adaptive quadrature of the radial integral
        val, _ = integrate.quad(
            lambda s: profile(s) * s ** (profile.d - 1), 0.0, profile.support_radius, epsabs=1e-14, limit=200
        )
        total = sphere_area(profile.d - 1) * val
        if abs(total - 1.0) > 1e-8:
            raise CertificationFailed(f"int Q = {total!r} != 1")
    return True


def _pd_spectrum(profile):
    """DFT of ``Phi`` sampled on a periodic box of side 2 (no self-overlap of the support)."""
    d = profile.d
    n = {1: 4096, 2: 256}.get(d, 48)
    a = (np.arange(n) - n // 2) * (2.0 / n)
    axes = np.meshgrid(*([a] * d), indexing="ij", sparse=True)
    r = np.sqrt(sum(c * c for c in axes))
    vals = np.fft.ifftshift(profile(r))
    return np.fft.fftn(vals).real


def phi_direct(r, d=1, nodes=400):
    """``Phi`` evaluated by direct quadrature, bypassing the table (reference values)."""
    return bump_autocorrelation(r, d, nodes) / bump_autocorrelation(0.0, d, nodes)[0]


def eval_L(profile_phi, j, t):
    """``L_j(t) = int_1^2 Phi(2^j u t)/u du`` by adaptive quadrature (abs. tol. 1e-12)."""
    if j < 1:
        raise ValueError(f"j must be >= 1, got {j}")
    r = float(np.linalg.norm(np.atleast_1d(np.asarray(t, dtype=float))))
    scale = 2.0**j * r
    if scale >= 1.0:
        return 0.0
    if scale == 0.0:
        return LOG2 * float(profile_phi(0.0))
    upper = min(2.0, 1.0 / scale)
    val, _ = integrate.quad(
        lambda u: float(profile_phi(scale * u)) / u, 1.0, upper, epsabs=1e-13, epsrel=1e-13, limit=200
    )
    return val


def L_radial(profile_phi, j, r):
    """Vectorised ``L_j`` at radii ``r`` via the telescoped log-tail of ``Phi``.

    With ``G(x) = int_x^1 Phi(s)/s ds = -log x - B(x)``, ``L_j(r) = G(a) - G(2a)``
    where ``a = 2^j r``.
    """
    a = 2.0**j * np.abs(np.asarray(r, dtype=float))
    B = profile_phi.log_tail
    out = np.zeros_like(a)
    low = a < 0.5
    out[low] = LOG2 - B(a[low]) + B(2.0 * a[low])
    mid = (a >= 0.5) & (a < 1.0)
    out[mid] = -np.log(a[mid]) - B(a[mid])
    return out


def _require_resolved(j, grid):
    if j < 1:
        raise ValueError(f"j must be >= 1, got {j}")
    if 2.0**-j < 4.0 / grid.M:
        raise ScaleUnresolvable(j, grid.M)


def build_H_grid(profile_phi, j, grid):
    """Samples of ``H_j`` at every grid offset (torus-wrapped, FFT order)."""
    _require_resolved(j, grid)
    return L_radial(profile_phi, j, grid.torus_distance)


def mollifier_spectrum(profile_q, j, grid):
    """``w_n = |Q^(eps_j n)|^2`` over the frequency lattice (FFT order)."""
    if j < 1:
        raise ValueError(f"j must be >= 1, got {j}")
    qhat = profile_q.transform(epsilon(j) * grid.frequency_norm)
    return qhat * qhat


@dataclass
class GridKernel:
    """Per-level covariance on the grid.

    ``eigenvalues`` are those of the circulant covariance matrix, i.e. the
    unnormalised DFT of ``real_samples``; their average is the variance.
    """

    j: int
    grid: GridSpec
    real_samples: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray = field(repr=False)
    variance: float
    epsilon: float
    support_radius: float
    clamped_mass: float = 0.0
    total_mass: float = 0.0
    method: str = "exact"

    @cached_property
    def sqrt_half_spectrum(self):
        """``sqrt(lambda)`` on the half-spectrum used by real FFTs."""
        half = self.eigenvalues[..., : self.grid.M // 2 + 1]
        return np.sqrt(np.maximum(half, 0.0))

    def certificate(self):
        return kernel_certificate(self)

    def to_csv(self, path, max_distance=None):
        grid = self.grid
        dist = grid.torus_distance
        idx = np.argwhere(dist <= (max_distance if max_distance is not None else np.inf))
        signed = np.where(idx < grid.M // 2, idx, idx - grid.M)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"offset_{a}" for a in range(grid.d)] + ["torus_distance", "K"])
            for k, s in zip(idx, signed):
                key = tuple(k)
                w.writerow(list(s) + [repr(float(dist[key])), repr(float(self.real_samples[key]))])

    def save(self, path):
        np.savez(
            path,
            j=self.j,
            d=self.grid.d,
            M=self.grid.M,
            real_samples=self.real_samples,
            eigenvalues=self.eigenvalues,
            variance=self.variance,
            epsilon=self.epsilon,
            support_radius=self.support_radius,
            clamped_mass=self.clamped_mass,
            total_mass=self.total_mass,
            method=self.method,
        )

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            return cls(
                j=int(z["j"]),
                grid=GridSpec(int(z["d"]), int(z["M"])),
                real_samples=z["real_samples"],
                eigenvalues=z["eigenvalues"],
                variance=float(z["variance"]),
                epsilon=float(z["epsilon"]),
                support_radius=float(z["support_radius"]),
                clamped_mass=float(z["clamped_mass"]),
                total_mass=float(z["total_mass"]),
                method=str(z["method"]),
            )


def _finish_kernel(j, grid, samples, extra_filter=None, method="exact"):
    lam = np.fft.fftn(samples)
    imag = float(np.max(np.abs(lam.imag)))
    lam = lam.real
    if imag > 1e-9 * max(1.0, float(np.max(np.abs(lam)))):
        raise CertificationFailed(f"level {j}: kernel samples are not even (imaginary spectrum {imag:.2e})")
    if extra_filter is not None:
        lam = lam * extra_filter
    negative = lam < 0
    clamped = float(-lam[negative].sum())
    total = float(np.abs(lam).sum())
    if clamped > CLAMP_BUDGET * total:
        raise ClampBudgetExceeded(j, clamped, total)
    lam = np.where(negative, 0.0, lam)
    real = np.fft.ifftn(lam).real
    eps = epsilon(j)
    return GridKernel(
        j=j,
        grid=grid,
        real_samples=real,
        eigenvalues=lam,
        variance=float(real.flat[0]),
        epsilon=eps,
        support_radius=2.0**-j + eps,
        clamped_mass=clamped,
        total_mass=total,
        method=method,
    )


def build_K_spectral(H_grid, mol, grid, j):
    """``K_j`` as the inverse DFT of ``DFT(H_j) * w``, with clamped-mass accounting."""
    H_grid = np.asarray(H_grid, dtype=float)
    if H_grid.shape != grid.shape or np.shape(mol) != grid.shape:
        raise ValueError("H grid and mollifier spectrum must match the grid shape")
    return _finish_kernel(j, grid, H_grid, extra_filter=np.asarray(mol, dtype=float), method="spectral")


def _mollified_radial(profile_phi, j, d, nodes):
    """Radial profile of ``L_j * R_j`` on R^d, where ``R_j = eps^-d Phi(./eps) / int Phi``.

    With the mollifier equal to the seed bump, ``Q * Q~`` is ``Phi`` rescaled, so
    ``K_j(r) = E[L_j(|r e_1 - eps V|)]`` for ``V`` with density ``Phi / int Phi``.
    """
    eps = epsilon(j)
    if d == 1:
        v, w = gauss_legendre(nodes)
        weight = w * profile_phi(v)
        weight = weight / weight.sum()

        def f(r):
            return np.sum(weight * L_radial(profile_phi, j, r[:, None] - eps * v), axis=1)

        return f

    v1, w1 = gauss_legendre(nodes)
    xr, wr = gauss_legendre(nodes)
    rho_max = np.sqrt(1.0 - v1 * v1)
    rho = 0.5 * rho_max[:, None] * (xr[None, :] + 1.0)
    weight = (
        w1[:, None] * 0.5 * rho_max[:, None] * wr[None, :] * rho ** (d - 2) * profile_phi(np.sqrt(v1[:, None] ** 2 + rho**2))
    ).ravel()
    keep = weight > 1e-17 * weight.max()
    weight = weight[keep] / weight[keep].sum()
    ax = np.broadcast_to(v1[:, None], rho.shape).ravel()[keep]
    perp = rho.ravel()[keep]

    def f(r):
        out = np.empty(r.shape)
        step = max(1, 4_000_000 // weight.size)
        for lo in range(0, r.size, step):
            rc = r[lo : lo + step, None]
            dist = np.sqrt((rc - eps * ax) ** 2 + (eps * perp) ** 2)
            out[lo : lo + step] = np.sum(weight * L_radial(profile_phi, j, dist), axis=1)
        return out

    return f


def _wrapped_radial_samples(radial, support, grid):
    """Periodise a radial function of R^d onto the torus grid."""
    axes = grid.offsets()
    shifts = (-1, 0, 1) if support > 0.5 else (0,)
    out = np.zeros(grid.shape)
    for combo in np.ndindex(*([len(shifts)] * grid.d)):
        dist2 = sum((a + shifts[c]) ** 2 for a, c in zip(axes, combo))
        out += radial(np.sqrt(dist2))
    return out


def build_K_exact(profile_phi, j, grid, nodes=None):
    """``K_j`` sampled exactly on the grid by real-space quadrature of the mollification."""
    _require_resolved(j, grid)
    d = grid.d
    if profile_phi.d != d:
        raise ValueError(f"profile dimension {profile_phi.d} != grid dimension {d}")
    if nodes is None:
        nodes = 320 if d == 1 else 192
    support = 2.0**-j + epsilon(j)
    radial = ChebTable(_mollified_radial(profile_phi, j, d, nodes), support, panels=KERNEL_PANELS)
    samples = _wrapped_radial_samples(radial, support, grid)
    return _finish_kernel(j, grid, samples)


_KERNEL_CACHE = {}


def get_kernel(j, grid, oversample=64):
    """Memoised :func:`build_K_exact` for the default profile in ``grid.d`` dimensions."""
    key = (j, grid.d, grid.M, oversample)
    if key not in _KERNEL_CACHE:
        _KERNEL_CACHE[key] = build_K_exact(build_profile_phi(grid.d, oversample), j, grid)
    return _KERNEL_CACHE[key]


def get_kernels(levels, grid, oversample=64):
    return [get_kernel(j, grid, oversample) for j in range(1, levels + 1)]


def kernel_certificate(kernel):
    """Measured values of every :class:`GridKernel` invariant."""
    grid = kernel.grid
    lam = kernel.eigenvalues
    far = grid.torus_distance >= 3.0 * 2.0**-kernel.j
    leak = float(np.max(np.abs(kernel.real_samples[far]))) if far.any() else 0.0
    mean_lam = float(lam.mean())
    var = kernel.variance
    consistency = abs(var - mean_lam) / max(abs(var), 1e-300)
    clamped_fraction = kernel.clamped_mass / kernel.total_mass if kernel.total_mass > 0 else 0.0
    checks = {
        "nonnegative_spectrum": bool(lam.min() >= 0.0),
        "clamp_budget": bool(clamped_fraction <= CLAMP_INVARIANT),
        "finite_support": bool(leak <= 1e-12 * max(var, 1e-300)),
        "variance_consistency": bool(consistency <= 1e-10),
    }
    return {
        "j": kernel.j,
        "method": kernel.method,
        "variance": var,
        "epsilon": kernel.epsilon,
        "variance_minus_log2": var - LOG2,
        "min_eigenvalue": float(lam.min()),
        "max_eigenvalue": float(lam.max()),
        "clamped_mass": kernel.clamped_mass,
        "clamped_fraction": clamped_fraction,
        "max_beyond_3x2^-j": leak,
        "variance_consistency": consistency,
        "checks": checks,
        "passed": all(checks.values()),
    }


def certify_kernel(kernel):
    """Raise :class:`CertificationFailed` naming the first failing kernel invariant."""
    cert = kernel_certificate(kernel)
    for name, ok in cert["checks"].items():
        if not ok:
            raise CertificationFailed(
                f"kernel level {kernel.j}: {name}",
                cert["min_eigenvalue"] if name in ("nonnegative_spectrum", "clamp_budget") else None,
            )
    return cert


def kernel_log_sum_check(kernels, grid, a_values=None, resolved_from=6, tol=0.02):
    """Octave increments of ``S(a) = sum_j K_j`` at torus distance ``2^-a``.

    Each increment ``S(a+1) - S(a)`` should approach ``log 2``. The verdict is
    taken over increments with ``resolved_from <= a <= J - 2``: at coarser
    offsets the continuous remainder still moves by more than ``tol`` per octave.
    """
    J = len(kernels)
    if J < 4:
        raise ValueError(f"need kernels for at least 4 levels, got {J}")
    for k, ker in enumerate(kernels, start=1):
        if ker.j != k or ker.grid != grid:
            raise ValueError("kernels must be levels 1..J on the given grid")
    if a_values is None:
        a_values = range(2, J)
    a_values = [int(a) for a in a_values]
    total = sum(k.real_samples for k in kernels)
    S = {}
    for a in sorted(set(a_values) | {a + 1 for a in a_values}):
        if a > grid.log2M:
            continue
        idx = (grid.M >> a,) + (0,) * (grid.d - 1)
        S[a] = float(total[idx])
    rows = []
    for a in a_values:
        if a + 1 not in S or a not in S:
            continue
        inc = S[a + 1] - S[a]
        in_window = resolved_from <= a <= J - 2
        rows.append(
            {
                "a": a,
                "S_a": S[a],
                "increment": inc,
                "deviation": inc - LOG2,
                "checked": in_window,
                "passed": (abs(inc - LOG2) <= tol) if in_window else None,
            }
        )
    checked = [r for r in rows if r["checked"]]
    return {
        "J": J,
        "tolerance": tol,
        "S": {str(a): v for a, v in S.items()},
        "increments": rows,
        "passed": all(r["passed"] for r in checked) if checked else None,
    }


def dumps_certificate(obj):
    return json.dumps(obj, indent=2, sort_keys=True)
