"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line that the terminal summary prints in
criterion order, then asserts.
"""

import math

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from gmctorus import pipeline
from gmctorus.analysis import (
    box_energies,
    correlation_scales,
    estimate_correlation_dim,
    estimate_fourier_dim,
    predicted_dimension,
    shell_stats,
)
from gmctorus.config import RunConfig
from gmctorus.gmc import MeasureState, SpectrumTable, advance, run_cascade
from gmctorus.grid import GridSpec
from gmctorus.kernel import LOG2, eval_L, get_kernel, kernel_log_sum_check
from gmctorus.pou import build_pou, decoupling_check, default_tracked_frequencies, localized_coeffs
from gmctorus.sampler import field_rng, lognormal_weight, p4_ratios, sample_field, sample_level


def record(n, ok, detail):
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, detail


def test_criterion_01_variance_limit(kernels1):
    rows = []
    ok = True
    for ker in kernels1[1:9]:  # j = 2..9
        dev = abs(ker.variance - LOG2)
        bound = 0.3 * ker.j**-2 + 5e-3
        ok &= dev <= bound
        rows.append(f"j={ker.j} dev={dev:.4f}/{bound:.4f}")
    last = abs(kernels1[8].variance - LOG2)
    ok &= last <= 5e-3
    record(1, ok, f"|K_j(0)-log2| within 0.3/j^2+5e-3 for j=2..9, j=9 dev {last:.2e}; " + ", ".join(rows))


def test_criterion_02_finite_dependence(kernels1, kernels2):
    worst = 0.0
    for ker in kernels1 + kernels2:
        far = ker.grid.torus_distance >= 3.0 * 2.0**-ker.j
        if far.any():
            worst = max(worst, float(np.max(np.abs(ker.real_samples[far]))))
    record(2, worst <= 1e-12, f"max |K_j| beyond 3*2^-j over d=1 j<=10 and d=2 j<=6: {worst:.2e} (<= 1e-12)")


def test_criterion_03_log_law(kernels1, grid1):
    rep = kernel_log_sum_check(kernels1, grid1, a_values=range(3, 9))
    devs = {r["a"]: r["deviation"] for r in rep["increments"]}
    ok = len(devs) == 6 and all(abs(v) <= 0.02 for v in devs.values())
    detail = ", ".join(f"a={a}:{v:+.4f}" for a, v in sorted(devs.items()))
    record(3, ok, f"octave increments minus log2 (tol 0.02): {detail}")


def test_criterion_04_exact_identities(phi1, grid1):
    L_err = max(abs(eval_L(phi1, j, np.zeros(1)) - LOG2) for j in range(1, 11))

    part_err = 0.0
    for grid in (grid1, GridSpec(2, 512)):
        for k in range(2, 7):
            part_err = max(part_err, build_pou(k, grid).certificate["partition_error"])

    tau, gamma = 0.4, 0.5
    tracked = default_tracked_frequencies(grid1)[:8]
    levels = (2, 5, 8)
    kernels = [get_kernel(j, grid1) for j in range(1, 9)]
    dec_err = 0.0
    count = 0
    for seed in (101, 202, 303):
        state = MeasureState.uniform(grid1)
        for j in range(1, 9):
            w = lognormal_weight(sample_level(kernels[j - 1], seed, 0), gamma, kernels[j - 1])
            new = advance(state, w)
            if j in levels:
                rep = decoupling_check(localized_coeffs(state, w, build_pou(j, grid1), tau, tracked), state, new)
                dec_err = max(dec_err, rep["max_relative_error"])
                count += len(rep["rows"])
            state = new
    ok = L_err <= 1e-10 and part_err <= 1e-12 and dec_err <= 1e-10 and count == 72
    record(
        4,
        ok,
        f"L_j(0) err {L_err:.1e} (1e-10); partition err {part_err:.1e} (1e-12); "
        f"decoupling rel err {dec_err:.1e} over {count} cases (1e-10)",
    )


def test_criterion_05_sampler():
    grid = GridSpec(1, 1024)
    ker = get_kernel(4, grid)
    N = 2000
    gamma = 0.8
    rng = field_rng(2024, 0, 4)
    acc = np.zeros(grid.M)
    x0 = np.empty(N)
    for i in range(N):
        v = sample_field(ker, rng).values
        # ensemble estimate of E[psi(0) psi(t)]
        acc += v[0] * v
        x0[i] = v[0]
    cov_err = float(np.max(np.abs(acc / N - ker.real_samples)))
    cov_bound = 5 * float(ker.eigenvalues.max()) / math.sqrt(N)

    X = np.exp(gamma * x0 - 0.5 * gamma**2 * ker.variance)
    m1, se1 = X.mean(), X.std(ddof=1) / math.sqrt(N)
    X2 = X**2
    m2, se2 = X2.mean(), X2.std(ddof=1) / math.sqrt(N)
    target2 = math.exp(gamma**2 * ker.variance)
    z1 = (m1 - 1.0) / se1
    z2 = (m2 - target2) / se2
    ok = cov_err <= cov_bound and abs(z1) <= 5 and abs(z2) <= 5
    record(5, ok, f"cov err {cov_err:.3f} <= {cov_bound:.3f}; E[X] z={z1:+.2f}; E[X^2] z={z2:+.2f} (|z|<=5)")


def test_criterion_06_martingale_mass(grid1):
    kernels = [get_kernel(j, grid1) for j in range(1, 9)]
    masses = np.array(
        [run_cascade(grid1, 0.5, 8, seed=6, replica=r, checkpoints=[8], kernels=kernels, with_spectra=False)[0][0].total_mass
         for r in range(256)]
    )
    se = masses.std(ddof=1) / math.sqrt(masses.size)
    z = (masses.mean() - 1.0) / se
    record(6, abs(z) <= 4, f"mean mass {masses.mean():.4f} +- {se:.4f}, z={z:+.2f} (|z|<=4)")


def _synthetic_shells(grid, s):
    norm = np.broadcast_to(grid.frequency_norm, grid.shape)
    amp = np.ones(grid.shape)
    np.power(norm, -s / 2, out=amp, where=norm > 0)
    coeffs = amp.astype(complex)
    return shell_stats(SpectrumTable(coeffs, grid))


def test_criterion_07_calibration():
    errs = {}
    for s in (0.3, 0.8, 1.5):
        grid = GridSpec(1, 4096) if s < 1 else GridSpec(2, 256)
        est = estimate_fourier_dim([_synthetic_shells(grid, s)], grid.d, mode="sup")
        errs[s] = abs(est.dimension - s)

    corr = {}
    for d, M in ((1, 4096), (2, 256)):
        ks = correlation_scales(M)
        uniform = np.ones((M,) * d)
        point = np.zeros((M,) * d)
        point[(0,) * d] = M**d
        corr[(d, "uniform")] = estimate_correlation_dim([box_energies(uniform, ks)], ks, d).dimension - d
        corr[(d, "point")] = estimate_correlation_dim([box_energies(point, ks)], ks, d).dimension
    ok = all(e <= 1e-6 for e in errs.values()) and all(abs(v) <= 1e-12 for v in corr.values())
    detail = ", ".join(f"s={s}: err {e:.1e}" for s, e in errs.items())
    detail += "; correlation errors " + ", ".join(f"d={d} {kind}: {v:.1e}" for (d, kind), v in corr.items())
    record(7, ok, detail)


def _run(tmp_path, name, **kw):
    out = pipeline.simulate(RunConfig(seed=1, **kw), out=tmp_path / name)
    return pipeline.analyze(out)


@pytest.mark.slow
def test_criterion_08_dimension_reproduction(tmp_path):
    parts = []
    ok = True
    for gamma in (0.4, 1.0):
        res = _run(tmp_path, f"d1_g{gamma}", d=1, gamma=gamma, grid_log2=12, levels=9, replicas=64)
        D = predicted_dimension(gamma, 1)
        f, c = res["fourier"]["dimension"], res["correlation"]["dimension"]
        good = abs(f - D) <= 0.2 and abs(c - D) <= 0.2 and abs(f - c) <= 0.15
        ok &= good
        parts.append(f"d=1 g={gamma}: D={D:.4f} dim_F={f:.3f} dim_2={c:.3f} gap={abs(f - c):.3f}")
    res = _run(tmp_path, "d2_g0.5", d=2, gamma=0.5, grid_log2=9, levels=6, replicas=32)
    f, c = res["fourier"]["dimension"], res["correlation"]["dimension"]
    ok &= abs(f - 1.75) <= 0.25 and abs(c - 1.75) <= 0.25
    parts.append(f"d=2 g=0.5: D=1.75 dim_F={f:.3f} dim_2={c:.3f}")
    record(8, ok, "; ".join(parts))


@pytest.mark.slow
def test_criterion_09_fl_moment_trend(tmp_path):
    res = _run(tmp_path, "fl", d=1, gamma=0.5, tau=0.4, grid_log2=12, levels=9, replicas=64)
    fl = res["fl_trend"]
    q = res["config"]["q"]
    ok = fl["bounded"] and q == 7
    record(
        9,
        ok,
        f"p={fl['p']:.3f} q={q}: late mean {fl['late_mean']:.4g} vs 2 x early max {2 * fl['early_max']:.4g}",
    )


def test_criterion_10_derivative_moments(kernels1, kernels2):
    worst = {}
    for label, kers in (("d=1", kernels1[:9]), ("d=2", kernels2)):
        for alpha, row in p4_ratios(kers, min_level=3).items():
            worst[f"{label} a=({alpha})"] = row["max_over_min"]
    ok = all(v <= 50 for v in worst.values())
    detail = ", ".join(f"{k}: {v:.2f}" for k, v in worst.items())
    record(10, ok, f"max/min of moment ratios over j>=3 (<= 50): {detail}")
