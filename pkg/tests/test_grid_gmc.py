import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gmctorus._radial import ChebTable, bump, gauss_legendre
from gmctorus.errors import GammaOutOfRange, LevelMismatch, ScaleUnresolvable
from gmctorus.gmc import MeasureState, SpectrumTable, advance, run_cascade, spectrum
from gmctorus.grid import GridSpec
from gmctorus.sampler import WeightField


@pytest.mark.parametrize("M", [0, 6, 12, 4])
def test_grid_rejects_bad_sizes(M):
    with pytest.raises(ValueError):
        GridSpec(1, M)


@given(d=st.integers(1, 3), log2M=st.integers(3, 6))
def test_grid_geometry(d, log2M):
    g = GridSpec(d, 2**log2M)
    assert g.log2M == log2M and g.size == g.M**d and g.j_max == log2M - 3
    a = g.axis_offsets()
    assert a.min() == -0.5 and a.max() < 0.5
    assert g.torus_distance.shape == g.shape
    assert g.torus_distance.flat[0] == 0.0
    assert g.torus_distance.max() == pytest.approx(0.5 * np.sqrt(d))
    n = tuple(range(-1, -1 - d, -1))
    assert g.frequency_index(n) == tuple(x % g.M for x in n)


def test_frequency_index_dimension_check():
    with pytest.raises(ValueError):
        GridSpec(2, 8).frequency_index((1,))


def test_gauss_legendre_exact_for_polynomials():
    x, w = gauss_legendre(8, 0.0, 2.0)
    assert np.sum(w * x**7) == pytest.approx(2.0**8 / 8, rel=1e-13)


def test_cheb_table_accuracy():
    tab = ChebTable(lambda r: bump(r, 1.0), 1.0, panels=64)
    r = np.linspace(0, 0.999, 1001)
    assert np.max(np.abs(tab(r) - bump(r, 1.0))) < 1e-10
    assert tab(np.array([1.0, 2.0])).tolist() == [0.0, 0.0]


def test_advance_level_order():
    g = GridSpec(1, 16)
    s = MeasureState.uniform(g)
    w = WeightField(2, np.ones(16), 0.1, 0.5)
    with pytest.raises(LevelMismatch):
        advance(s, w)
    w1 = WeightField(1, np.linspace(0.5, 1.5, 16), 0.1, 0.5)
    s1 = advance(s, w1)
    assert s1.level == 1 and s1.total_mass == pytest.approx(1.0)
    assert s1.ledger == ((1, 0.5, 0.1),)
    assert s1.grid == g


def test_spectrum_convention():
    M = 32
    t = np.arange(M) / M
    state = MeasureState(0, 1.0 + np.sin(2 * np.pi * 3 * t), 1.0)
    spec = spectrum(state)
    assert spec.convention == "no-conjugate"
    assert spec[(0,)] == pytest.approx(1.0)
    # e(+n t) convention: the e(3t) component shows up at n = -3
    assert spec[(3,)] == pytest.approx(0.5j)
    assert spec[(-3,)] == pytest.approx(-0.5j)


def test_aliasing_guard_and_csv(tmp_path):
    g = GridSpec(2, 16)
    spec = SpectrumTable(np.ones(g.shape, complex), g)
    mask = spec.aliasing_suspect
    assert mask[4, 0] and not mask[3, 3] and mask[12, 0]
    spec.to_csv(tmp_path / "s.csv")
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "n_0,n_1,abs_n,re,im,power"
    assert len(rows) - 1 == 7 * 7


def test_cascade_determinism_and_replay(grid1, kernels1, replay):
    kw = dict(checkpoints=[8], kernels=kernels1[:8], with_spectra=False)
    a = run_cascade(grid1, 0.5, 8, seed=11, **kw)[0][0]
    b = run_cascade(grid1, 0.5, 8, seed=11, **kw)[0][0]
    assert np.array_equal(a.density, b.density)
    assert a.total_mass == pytest.approx(replay["mass_d1_M4096_g0.5_m8_seed11"], rel=1e-12)
    c = run_cascade(grid1, 0.5, 8, seed=11, replica=1, **kw)[0][0]
    assert c.total_mass != a.total_mass


def test_cascade_replay_2d(grid2, kernels2, replay):
    state = run_cascade(grid2, 0.5, 6, seed=7, checkpoints=[6], kernels=kernels2, with_spectra=False)[0][0]
    assert state.total_mass == pytest.approx(replay["mass_d2_M512_g0.5_m6_seed7"], rel=1e-12)


def test_cascade_checkpoints(grid1, kernels1):
    states, spectra = run_cascade(grid1, 0.3, 3, seed=0, kernels=kernels1[:3])
    assert [s.level for s in states] == [0, 1, 2, 3]
    assert len(spectra) == 4
    for s, sp in zip(states, spectra):
        assert sp[(0,)].real == pytest.approx(s.total_mass)
        assert np.all(s.density > 0)


def test_cascade_errors(grid1):
    with pytest.raises(ScaleUnresolvable, match="level 10"):
        run_cascade(grid1, 0.5, 10, seed=0)
    with pytest.raises(GammaOutOfRange):
        run_cascade(grid1, 1.5, 2, seed=0)
