import math

import numpy as np
import pytest

from recproj.kernels import density_1d
from recproj.lattice import (
    DividendTooLargeError,
    GridError,
    NyquistError,
    OperatorCache,
    RingingError,
    build_fourier_grid,
    build_gamma2,
    build_grid,
    build_transition_1d,
    cash_dividend_shift,
    expand_gamma2,
    proportional_dividend_shift,
)
from recproj.models import BSModel, HestonModel, MarketEnv

ENV = MarketEnv(r=0.05)
HESTON = HestonModel(v0=0.04, beta=2.0, sigma_lt=0.2, omega=0.2, rho=0.0)


def small_grid(J=6, J_w=4, max_dividend=0.0):
    return build_grid(100.0, 0.2, 1.0, J, width_mult=5.0,
                      variance_bounds=(0.0, 0.3), J_w=J_w,
                      max_dividend=max_dividend)


# ---------------------------------------------------------------------------
# grid construction
# ---------------------------------------------------------------------------

def test_strike_sits_mid_cell():
    grid = build_grid(100.0, 0.2, 1.0, 8, width_mult=10.0)
    k = math.log(100.0)
    offsets = (grid.y - k) / grid.dy
    # nearest nodes are half a cell away on each side
    assert np.min(np.abs(offsets - 0.5) % 1.0) < 1e-9
    assert not np.any(np.abs(grid.y - k) < 0.4 * grid.dy)


def test_grid_size_is_power_of_two():
    grid = build_grid(50.0, 0.3, 2.0, 7, width_mult=10.0)
    assert grid.n == 2 ** 7
    assert grid.y.shape == (128,)


def test_variance_nodes_span_bounds_inclusively():
    grid = small_grid(J_w=4)
    assert grid.n_w == 16
    assert grid.w[0] == pytest.approx(0.0)
    assert grid.w[-1] == pytest.approx(0.3)
    assert grid.dw == pytest.approx(0.3 / 15)


def test_dividend_raises_grid_floor():
    plain = build_grid(100.0, 0.2, 1.0, 8, width_mult=10.0)
    shifted = build_grid(100.0, 0.2, 1.0, 8, width_mult=10.0,
                         max_dividend=30.0)
    assert shifted.y[0] > plain.y[0]
    assert math.exp(shifted.y[0]) > 30.0
    assert shifted.dy == pytest.approx(plain.dy)


def test_oversized_dividend_rejected():
    with pytest.raises(DividendTooLargeError):
        build_grid(100.0, 0.2, 1.0, 5, width_mult=3.0, max_dividend=95.0)


def test_too_coarse_level_rejected():
    with pytest.raises(GridError):
        build_grid(100.0, 0.2, 1.0, 3, width_mult=10.0)


def test_dividend_shifts():
    grid = small_grid(max_dividend=2.0)
    shift = cash_dividend_shift(grid, 2.0)
    x_cond = grid.y - shift
    assert np.allclose(np.exp(x_cond), np.exp(grid.y) - 2.0)
    prop = proportional_dividend_shift(grid, 0.02)
    assert np.allclose(prop, -math.log(0.98))


# ---------------------------------------------------------------------------
# 1-D transition operators
# ---------------------------------------------------------------------------

def test_transition_1d_is_toeplitz_without_dividend():
    grid = build_grid(100.0, 0.2, 1.0, 7, width_mult=10.0)
    op = build_transition_1d(BSModel(sigma=0.2), ENV, grid, 0.5)
    assert op.toeplitz
    m = op.matrix
    assert np.allclose(m[1:, 1:], m[:-1, :-1])


def test_transition_1d_row_sums_equal_discount():
    grid = build_grid(100.0, 0.2, 1.0, 9, width_mult=10.0)
    op = build_transition_1d(BSModel(sigma=0.2), ENV, grid, 0.5)
    sums = op.row_sums()
    n = grid.n
    interior = slice(n // 4, 3 * n // 4)
    assert np.allclose(sums[interior], math.exp(-ENV.r * 0.5), atol=1e-6)


def test_transition_1d_apply_matches_quadrature():
    grid = build_grid(100.0, 0.2, 1.0, 8, width_mult=10.0)
    op = build_transition_1d(BSModel(sigma=0.2), ENV, grid, 0.25)
    h = np.maximum(np.exp(grid.y) - 100.0, 0.0)
    got = op.apply(h)
    i = grid.n // 2
    dens = density_1d(grid.y[i], grid.y, 0.25, ENV, BSModel(sigma=0.2))
    want = np.sum(dens * h) * grid.dy
    assert got[i] == pytest.approx(want, rel=1e-12)


def test_transition_1d_with_shift_conditions_on_post_dividend_price():
    grid = small_grid(J=8, max_dividend=2.0)
    shift = cash_dividend_shift(grid, 2.0)
    op = build_transition_1d(BSModel(sigma=0.2), ENV, grid, 0.5, shift=shift)
    assert not op.toeplitz
    h = np.maximum(np.exp(grid.y) - 100.0, 0.0)
    got = op.apply(h)
    i = grid.n // 2
    x_cond = math.log(math.exp(grid.y[i]) - 2.0)
    dens = density_1d(x_cond, grid.y, 0.5, ENV, BSModel(sigma=0.2))
    want = np.sum(dens * h) * grid.dy
    assert got[i] == pytest.approx(want, rel=1e-10)


# ---------------------------------------------------------------------------
# 2-D kernels
# ---------------------------------------------------------------------------

def test_gamma2_fft_equals_direct_sum():
    grid = small_grid(J=6, J_w=3)
    fgrid = build_fourier_grid(grid)
    tau = 0.25
    fast = build_gamma2(HESTON, ENV, grid, fgrid, tau, method="fft",
                        ring_tol=1e-2)
    slow = build_gamma2(HESTON, ENV, grid, fgrid, tau, method="direct",
                        ring_tol=1e-2)
    assert np.max(np.abs(fast.gamma2 - slow.gamma2)) < 1e-8


def test_gamma1_dual_routes_agree():
    grid = small_grid(J=7, J_w=4)
    fgrid = build_fourier_grid(grid)
    op = build_gamma2(HESTON, ENV, grid, fgrid, 0.25, ring_tol=1e-2)
    a = op.gamma1(method="sum")
    b = op.gamma1(model=HESTON, env=ENV, method="kappa0")
    # truncation spill contaminates the variance-axis tails; compare on the
    # central band only
    interior = slice(3, 10)
    assert np.max(np.abs(a[:, interior] - b[:, interior])) < 1e-6


def test_gamma2_row_mass_matches_discount():
    grid = small_grid(J=8, J_w=4)
    fgrid = build_fourier_grid(grid)
    op = build_gamma2(HESTON, ENV, grid, fgrid, 0.25, ring_tol=1e-2)
    mass = op.row_mass()
    p_mid = grid.n_w // 2
    assert mass[p_mid] == pytest.approx(math.exp(-ENV.r * 0.25), abs=1e-4)


def test_kernel_apply_matches_expanded_tensor():
    grid = small_grid(J=6, J_w=3)
    fgrid = build_fourier_grid(grid)
    op = build_gamma2(HESTON, ENV, grid, fgrid, 0.25, ring_tol=1e-2)
    rng = np.random.default_rng(0)
    v = rng.uniform(0.0, 5.0, size=(grid.n, grid.n_w))
    full = expand_gamma2(op)
    want = np.einsum("ipjq,jq->ip", full, v) * math.sqrt(grid.dy * grid.dw)
    got = op.apply(v)
    assert np.allclose(got, want, rtol=1e-10, atol=1e-12)


def test_kernel_apply_at_matches_apply_on_node_points():
    grid = small_grid(J=7, J_w=4)
    fgrid = build_fourier_grid(grid)
    op = build_gamma2(HESTON, ENV, grid, fgrid, 0.25, ring_tol=1e-2)
    rng = np.random.default_rng(1)
    v = rng.uniform(0.0, 5.0, size=(grid.n, grid.n_w))
    on_grid = op.apply(v)
    off = op.apply_at(v, grid.y)
    interior_w = slice(1, grid.n_w)
    assert np.max(np.abs(on_grid[:, interior_w] - off[:, interior_w])) < 1e-7


def test_ringing_error_raised_at_tight_tolerance():
    grid = small_grid(J=6, J_w=4)
    fgrid = build_fourier_grid(grid)
    with pytest.raises(RingingError):
        build_gamma2(HESTON, ENV, grid, fgrid, 0.25, ring_tol=1e-10)


def test_nyquist_violation_rejected():
    coarse = small_grid(J=6, J_w=4)
    fine = small_grid(J=7, J_w=4)
    fgrid_fine = build_fourier_grid(fine)
    with pytest.raises(NyquistError):
        build_gamma2(HESTON, ENV, coarse, fgrid_fine, 0.25, ring_tol=1e-2)
    with pytest.raises(GridError):
        build_fourier_grid(coarse, oversample=0)


# ---------------------------------------------------------------------------
# operator cache
# ---------------------------------------------------------------------------

def test_operator_cache_round_trip_1d(tmp_path):
    cache = OperatorCache(tmp_path)
    grid = build_grid(100.0, 0.2, 1.0, 7, width_mult=10.0)
    model = BSModel(sigma=0.2)
    op = build_transition_1d(model, ENV, grid, 0.5)
    path = cache.store_dense(op, model, ENV, grid)
    assert path.exists()
    loaded = cache.load_dense(model, ENV, grid, 0.5)
    assert loaded is not None
    assert np.array_equal(loaded.matrix, op.matrix)
    assert loaded.toeplitz == op.toeplitz


def test_operator_cache_round_trip_2d(tmp_path):
    cache = OperatorCache(tmp_path)
    grid = small_grid(J=6, J_w=3)
    fgrid = build_fourier_grid(grid)
    op = build_gamma2(HESTON, ENV, grid, fgrid, 0.25, ring_tol=1e-2)
    cache.store_kernel2d(op, HESTON, ENV)
    loaded = cache.load_kernel2d(HESTON, ENV, grid, fgrid, 0.25)
    assert loaded is not None
    assert np.array_equal(loaded.gamma2, op.gamma2)
    rng = np.random.default_rng(2)
    v = rng.uniform(0.0, 3.0, size=(grid.n, grid.n_w))
    assert np.allclose(loaded.apply(v), op.apply(v))


def test_operator_cache_misses_on_different_grid(tmp_path):
    cache = OperatorCache(tmp_path)
    model = BSModel(sigma=0.2)
    grid = build_grid(100.0, 0.2, 1.0, 7, width_mult=10.0)
    op = build_transition_1d(model, ENV, grid, 0.5)
    cache.store_dense(op, model, ENV, grid)
    other = build_grid(100.0, 0.2, 1.0, 8, width_mult=10.0)
    assert cache.load_dense(model, ENV, other, 0.5) is None
