"""Grids and discounted transition operators.

1-D operators sample a closed-form transition density on a log-price grid.
2-D operators reconstruct the joint (log-price, variance) transition kernel
from the discounted characteristic function on a Fourier grid; the kernel
depends on the price nodes only through the offset between conditioning and
target log-price, which gives an FFT fast path for both construction and
application.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import next_fast_len
from scipy.linalg import toeplitz as _toeplitz

from .kernels import char2, density_1d
from .models import MarketEnv, model_to_dict


class GridError(ValueError):
    """Invalid grid construction parameters."""


class DividendTooLargeError(ValueError):
    """A cash dividend exceeds the spot value at some grid node."""


class NyquistError(ValueError):
    """Fourier grid is inconsistent with the price/variance grid spacing."""


class RingingError(FloatingPointError):
    """Negative kernel mass from Fourier ringing exceeds tolerance."""


def _sinc(u):
    """sin(u)/u with the removable singularity filled."""
    return np.sinc(np.asarray(u) / np.pi)


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LatticeGrid:
    """Equally spaced log-price nodes, optionally crossed with variance nodes.

    The strike's log value sits exactly mid-cell (half-step offset), so payoff
    discontinuities at the strike fall on cell boundaries, never on a node.
    """
    y: np.ndarray
    dy: float
    level: int
    strike: float
    w: np.ndarray | None = None
    dw: float | None = None
    level_w: int | None = None

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def n_w(self) -> int:
        return 0 if self.w is None else self.w.size

    @property
    def spot(self) -> np.ndarray:
        return np.exp(self.y)

    def signature(self) -> bytes:
        parts = [self.y[0], self.dy, float(self.n)]
        if self.w is not None:
            parts += [self.w[0], self.dw, float(self.n_w)]
        return struct.pack(f"<{len(parts)}d", *parts)


@dataclass(frozen=True, eq=False)
class FourierGrid:
    """Symmetric half-offset frequency nodes for the price axis (lam) and,
    when present, the variance axis (kap)."""
    lam: np.ndarray
    dlam: float
    kap: np.ndarray | None = None
    dkap: float | None = None


def build_grid(strike: float, sigma_ref: float, T: float, J: int,
               width_mult: float = 10.0,
               variance_bounds: tuple[float, float] | None = None,
               J_w: int = 4,
               max_dividend: float = 0.0) -> LatticeGrid:
    """Log-price grid of N = 2^J nodes spanning width_mult reference standard
    deviations either side of the strike, strike placed mid-cell.

    If max_dividend > 0 the lower bound is raised (by whole cells, preserving
    the mid-cell strike placement) until every node's spot value exceeds the
    dividend; impossible accommodations are rejected.
    """
    if J < 4:
        raise GridError(f"resolution level J must be >= 4, got {J}")
    if strike <= 0 or sigma_ref <= 0 or T <= 0:
        raise GridError("strike, sigma_ref and T must be positive")
    if width_mult <= 0:
        raise GridError("width_mult must be positive")
    n = 2 ** J
    span = 2.0 * width_mult * sigma_ref * math.sqrt(T)
    dy = span / n
    log_k = math.log(strike)
    y = log_k + (np.arange(n) + 0.5 - n / 2) * dy

    if max_dividend > 0.0:
        floor = math.log(max_dividend)
        if y[0] <= floor:
            cells = int(math.ceil((floor - y[0]) / dy)) + 1
            # the strike must stay comfortably interior after raising the floor
            if y[0] + cells * dy > log_k - 8 * dy:
                raise DividendTooLargeError(
                    f"cash dividend {max_dividend} cannot be accommodated: "
                    f"raising the grid floor above log({max_dividend}) would "
                    f"push the lower bound past the strike region")
            y = y + cells * dy

    w = dw = None
    level_w = None
    if variance_bounds is not None:
        lo, hi = variance_bounds
        if not (0.0 <= lo < hi):
            raise GridError(f"invalid variance bounds {variance_bounds}")
        if J_w < 1:
            raise GridError(f"variance resolution level J_w must be >= 1, got {J_w}")
        n_w = 2 ** J_w
        # endpoint-inclusive nodes: the variance axis has no discontinuity to
        # dodge, and round conditioning-variance levels then fall on nodes
        dw = (hi - lo) / (n_w - 1)
        w = lo + np.arange(n_w) * dw
        level_w = J_w
    return LatticeGrid(y=y, dy=dy, level=J, strike=strike,
                       w=w, dw=dw, level_w=level_w)


def build_fourier_grid(grid: LatticeGrid, oversample: int = 4,
                       kappa_mult: int = 4) -> FourierGrid:
    """Frequency grid with R = oversample*N nodes covering (-pi/dy, pi/dy),
    half-offset so nodes come in Hermitian pairs.

    The variance axis keeps the same frequency step as the price-axis recipe
    but extends the range to kappa_mult*pi/dw: the conditional variance
    density can be much narrower than a variance cell, so its characteristic
    function needs a wider band before it decays.
    """
    if oversample < 1:
        raise GridError("oversample must be >= 1")
    r_n = oversample * grid.n
    dlam = 2.0 * math.pi / (r_n * grid.dy)
    lam = (np.arange(r_n) + 0.5 - r_n / 2) * dlam
    kap = dkap = None
    if grid.w is not None:
        if kappa_mult < 1:
            raise GridError("kappa_mult must be >= 1")
        z_n = oversample * kappa_mult * grid.n_w
        dkap = 2.0 * kappa_mult * math.pi / (z_n * grid.dw)
        kap = (np.arange(z_n) + 0.5 - z_n / 2) * dkap
    return FourierGrid(lam=lam, dlam=dlam, kap=kap, dkap=dkap)


def _check_nyquist(grid: LatticeGrid, fgrid: FourierGrid) -> None:
    if fgrid.dlam > math.pi / grid.dy + 1e-12:
        raise NyquistError("price-axis frequency step exceeds pi/dy")
    if np.max(np.abs(fgrid.lam)) > math.pi / grid.dy + 1e-12:
        raise NyquistError("price-axis frequencies exceed pi/dy")
    if fgrid.kap is not None and grid.w is not None:
        if fgrid.dkap > math.pi / grid.dw + 1e-12:
            raise NyquistError("variance-axis frequency step exceeds pi/dw")


# ---------------------------------------------------------------------------
# conditioning shifts (dividend handling)
# ---------------------------------------------------------------------------

def cash_dividend_shift(grid: LatticeGrid, amount: float) -> np.ndarray:
    """Per-node conditioning offset delta(y_i) = y_i - log(e^{y_i} - d), so the
    operator row i is sampled at the post-dividend log-price."""
    if amount < 0:
        raise GridError(f"dividend amount must be >= 0, got {amount}")
    spot = np.exp(grid.y)
    if np.any(spot - amount <= 0.0):
        raise DividendTooLargeError(
            f"cash dividend {amount} >= spot {spot.min():.6g} at the lowest "
            f"grid node; raise the grid floor")
    return grid.y - np.log(spot - amount)


def proportional_dividend_shift(grid: LatticeGrid, rate: float) -> np.ndarray:
    """Constant conditioning offset for a dividend proportional to spot:
    post-dividend log-price is y + log(1 - rate)."""
    if not 0.0 <= rate < 1.0:
        raise GridError(f"proportional dividend rate must be in [0,1), got {rate}")
    return np.full(grid.n, -math.log1p(-rate))


# ---------------------------------------------------------------------------
# 1-D operators
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Dense1D:
    """Discounted transition matrix entries[i][j] = dy * G(x_i; y_j, tau) with
    conditioning points x_i = y_i - delta_i."""
    matrix: np.ndarray
    tau: float
    dy: float
    toeplitz: bool
    clipped_mass: float = 0.0

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def row_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=1)


def build_transition_1d(model, env: MarketEnv, grid: LatticeGrid, tau: float,
                        shift: np.ndarray | None = None) -> Dense1D:
    """Sample the model's closed-form discounted density on the grid.

    With no shift the kernel depends only on y_j - y_i, so a single row/column
    pair determines the whole (Toeplitz) matrix.
    """
    if tau <= 0:
        raise GridError(f"tau must be positive, got {tau}")
    y = grid.y
    if shift is None:
        offsets = np.arange(-(grid.n - 1), grid.n) * grid.dy
        vals = grid.dy * density_1d(0.0, offsets, tau, env, model)
        col = vals[grid.n - 1::-1]
        row = vals[grid.n - 1:]
        return Dense1D(matrix=_toeplitz(col, row), tau=tau, dy=grid.dy,
                       toeplitz=True)
    shift = np.asarray(shift, dtype=float)
    if shift.shape != (grid.n,):
        raise GridError(f"shift must have shape ({grid.n},), got {shift.shape}")
    x_cond = y - shift
    matrix = grid.dy * density_1d(x_cond[:, None], y[None, :], tau, env, model)
    return Dense1D(matrix=matrix, tau=tau, dy=grid.dy, toeplitz=False)


# ---------------------------------------------------------------------------
# 2-D operators
# ---------------------------------------------------------------------------

class Kernel2D:
    """Joint (log-price, variance) discounted transition kernel.

    gamma2[m, p, q] holds the kernel at price offset y_j - x_i = (m - (N-1))*dy
    between conditioning point x_i and target node y_j, for conditioning
    variance node p and target variance node q.  mix[r, p, q] is the
    per-price-frequency variance mixing matrix from which both gamma2 and the
    shifted (dividend-date) applications are synthesized.
    """

    def __init__(self, grid: LatticeGrid, fgrid: FourierGrid, tau: float,
                 mix: np.ndarray, gamma2: np.ndarray, clipped_mass: float):
        self.grid = grid
        self.fgrid = fgrid
        self.tau = tau
        self.mix = mix
        self.gamma2 = gamma2
        self.clipped_mass = clipped_mass
        self._conv_len = next_fast_len(3 * grid.n - 2)
        self._kernel_fft = None  # lazy rfft of the offset kernel

    # -- plain backward step: FFT correlation over the price axis ----------

    def _kernel_fft_cached(self) -> np.ndarray:
        if self._kernel_fft is None:
            k_rev = self.gamma2[::-1]
            self._kernel_fft = np.fft.rfft(k_rev, self._conv_len, axis=0)
        return self._kernel_fft

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Contract the kernel against a surface v[j, q]; returns the
        discounted expectation surface at the grid's own nodes."""
        grid = self.grid
        if v.shape != (grid.n, grid.n_w):
            raise GridError(f"surface must have shape {(grid.n, grid.n_w)}, "
                            f"got {v.shape}")
        kf = self._kernel_fft_cached()                     # (Lf, W, W)
        vf = np.fft.rfft(v, self._conv_len, axis=0)        # (Lf, W)
        cf = np.einsum("lpq,lq->lp", kf, vf)
        full = np.fft.irfft(cf, self._conv_len, axis=0)
        out = full[grid.n - 1:2 * grid.n - 1]
        return math.sqrt(grid.dy * grid.dw) * out

    # -- shifted / off-grid conditioning: spectral synthesis ---------------

    def _forward_price_dft(self, v: np.ndarray) -> np.ndarray:
        """vt[r, ...] = sum_j exp(-i lam_r y_j) v[j, ...] via padded FFT."""
        grid, lam = self.grid, self.fgrid.lam
        r_n = lam.size
        j = np.arange(grid.n)
        twiddle = np.exp(-2j * np.pi * j * (0.5 - r_n / 2) / r_n)
        pad_shape = (r_n,) + v.shape[1:]
        padded = np.zeros(pad_shape, dtype=complex)
        padded[:grid.n] = v * twiddle.reshape((-1,) + (1,) * (v.ndim - 1))
        vt = np.fft.fft(padded, axis=0)
        phase = np.exp(-1j * lam * grid.y[0])
        return vt * phase.reshape((-1,) + (1,) * (v.ndim - 1))

    def _synthesize(self, x: np.ndarray, coef: np.ndarray,
                    block: int = 256) -> np.ndarray:
        """out[i, ...] = Re sum_r exp(i lam_r x_i) coef[r, ...]."""
        lam = self.fgrid.lam
        out = np.empty((x.size,) + coef.shape[1:])
        flat = coef.reshape(lam.size, -1)
        for lo in range(0, x.size, block):
            hi = min(lo + block, x.size)
            phases = np.exp(1j * np.outer(x[lo:hi], lam))
            out[lo:hi] = (phases @ flat).real.reshape((hi - lo,) + coef.shape[1:])
        return out

    def apply_at(self, v: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Contract the kernel against v[j, q] for arbitrary conditioning
        log-prices x (used on dividend dates and for boundary read-outs).

        This path synthesizes the contraction spectrally, so the
        negative-entry clipping applied to gamma2 does not act here; the
        clipped mass is below ring tolerance by construction.
        """
        grid = self.grid
        if v.shape != (grid.n, grid.n_w):
            raise GridError(f"surface must have shape {(grid.n, grid.n_w)}, "
                            f"got {v.shape}")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        vt = self._forward_price_dft(v)                     # (R, W)
        c = np.einsum("rpq,rq->rp", self.mix, vt)           # (R, W)
        sinc_r = _sinc(self.fgrid.lam * grid.dy / 2.0)
        pref = (math.sqrt(grid.dy * grid.dw)
                * self.fgrid.dlam * math.sqrt(grid.dy) / (2.0 * math.pi))
        return pref * self._synthesize(x, sinc_r[:, None] * c)

    # -- marginal price-axis kernel (last recursion step) -------------------

    def gamma1(self, model=None, env: MarketEnv | None = None,
               method: str = "sum") -> np.ndarray:
        """Price-axis kernel gamma1[m, p] at integer offsets.

        method="sum" integrates gamma2 over the target variance axis;
        method="kappa0" rebuilds it from the characteristic function at zero
        variance frequency (requires model and env). The two must agree.
        """
        grid = self.grid
        if method == "sum":
            return self.gamma2.sum(axis=2) * math.sqrt(grid.dw)
        if method != "kappa0":
            raise ValueError(f"unknown gamma1 method {method!r}")
        if model is None or env is None:
            raise ValueError("kappa0 route needs model and env")
        lam = self.fgrid.lam
        phi0 = char2(0.0, grid.w[None, :], self.tau,
                     lam[:, None], 0.0, env, model)          # (R, W)
        coef = _sinc(lam * grid.dy / 2.0)[:, None] * phi0
        offsets = np.arange(-(grid.n - 1), grid.n)
        vals = _offset_synthesis(coef, offsets, lam.size)
        return self.fgrid.dlam * math.sqrt(grid.dy) / (2.0 * math.pi) * vals

    def apply_gamma1(self, h: np.ndarray,
                     x: np.ndarray | None = None) -> np.ndarray:
        """Contract gamma1 against a terminal payoff h[j]; conditioning points
        default to the grid nodes."""
        grid = self.grid
        if h.shape != (grid.n,):
            raise GridError(f"payoff must have shape ({grid.n},), got {h.shape}")
        if x is None:
            x = grid.y
        x = np.atleast_1d(np.asarray(x, dtype=float))
        ht = self._forward_price_dft(h.astype(float))        # (R,)
        # integrate the mixing matrix over target variance with unit weights:
        # mix already carries the target-axis quadrature, so summing over q
        # with sqrt(dw) reproduces the variance marginal
        c = self.mix.sum(axis=2) * math.sqrt(grid.dw)        # (R, W)
        sinc_r = _sinc(self.fgrid.lam * grid.dy / 2.0)
        coef = sinc_r[:, None] * c * ht[:, None]
        pref = (math.sqrt(grid.dy)
                * self.fgrid.dlam * math.sqrt(grid.dy) / (2.0 * math.pi))
        return pref * self._synthesize(x, coef)

    # -- diagnostics --------------------------------------------------------

    def row_mass(self) -> np.ndarray:
        """Discounted mass per conditioning variance node (interior rows)."""
        return self.gamma2.sum(axis=(0, 2)) * math.sqrt(self.grid.dy
                                                        * self.grid.dw)


def _offset_synthesis(coef: np.ndarray, offsets: np.ndarray,
                      r_n: int) -> np.ndarray:
    """Re sum_r exp(-i lam_r m dy) coef[r, ...] for integer offsets m, using
    the FFT identity lam_r * m * dy = 2 pi m (r + 1/2 - R/2) / R."""
    spec = np.fft.fft(coef, axis=0)                          # index = m mod R
    idx = np.mod(offsets, r_n)
    phase = np.exp(-2j * np.pi * offsets * (0.5 - r_n / 2) / r_n)
    gathered = spec[idx] * phase.reshape((-1,) + (1,) * (coef.ndim - 1))
    return gathered.real


def build_gamma2(model, env: MarketEnv, grid: LatticeGrid, fgrid: FourierGrid,
                 tau: float, method: str = "fft",
                 ring_tol: float = 1e-6,
                 chunk: int = 256) -> Kernel2D:
    """Reconstruct the 2-D kernel from the discounted joint characteristic
    function.

    method="fft" synthesizes the price-offset dependence with an FFT;
    method="direct" evaluates the double Fourier sum explicitly (reference
    path, quadratic cost — use on small grids). Negative entries from
    Fourier ringing are clipped to zero; the operation fails if the clipped
    mass exceeds ring_tol of the row mass.
    """
    if tau <= 0:
        raise GridError(f"tau must be positive, got {tau}")
    if grid.w is None or fgrid.kap is None:
        raise GridError("2-D kernel needs variance nodes on both grids")
    _check_nyquist(grid, fgrid)
    lam, kap = fgrid.lam, fgrid.kap
    w = grid.w
    n_w = grid.n_w

    # per-frequency variance mixing: mix[r, p, q] couples conditioning
    # variance node p to target variance node q at price frequency lam_r
    ehat_w = (np.exp(-1j * np.outer(kap, w))
              * _sinc(kap * grid.dw / 2.0)[:, None])         # (Z, W)
    mix = np.empty((lam.size, n_w, n_w), dtype=complex)
    w_scale = fgrid.dkap * math.sqrt(grid.dw) / (2.0 * math.pi)
    for lo in range(0, lam.size, chunk):
        hi = min(lo + chunk, lam.size)
        phi = char2(0.0, w[None, None, :], tau,
                    lam[lo:hi, None, None], kap[None, :, None],
                    env, model)                              # (rc, Z, W)->[r,z,p]
        mix[lo:hi] = w_scale * np.einsum("rzp,zq->rpq", phi, ehat_w)

    offsets = np.arange(-(grid.n - 1), grid.n)
    sinc_r = _sinc(lam * grid.dy / 2.0)
    pref = fgrid.dlam * math.sqrt(grid.dy) / (2.0 * math.pi)
    coef = sinc_r[:, None, None] * mix
    if method == "fft":
        gamma2 = pref * _offset_synthesis(coef, offsets, lam.size)
    elif method == "direct":
        basis = np.exp(-1j * np.outer(offsets, lam) * grid.dy)  # (2N-1, R)
        gamma2 = pref * (basis @ coef.reshape(lam.size, -1)).real
        gamma2 = gamma2.reshape(offsets.size, n_w, n_w)
    else:
        raise ValueError(f"unknown construction method {method!r}")

    neg = np.minimum(gamma2, 0.0)
    cell = math.sqrt(grid.dy * grid.dw)
    neg_mass = -neg.sum(axis=(0, 2)) * cell                  # per cond. node
    pos_mass = np.maximum(gamma2, 0.0).sum(axis=(0, 2)) * cell
    worst = float(np.max(neg_mass / np.maximum(pos_mass, 1e-300)))
    if worst > ring_tol:
        raise RingingError(
            f"clipped negative kernel mass fraction {worst:.3g} exceeds "
            f"ring tolerance {ring_tol:.3g}; refine the Fourier grid")
    clipped = float(neg_mass.sum())
    gamma2 = np.maximum(gamma2, 0.0)
    return Kernel2D(grid=grid, fgrid=fgrid, tau=tau, mix=mix,
                    gamma2=gamma2, clipped_mass=clipped)


def expand_gamma2(op: Kernel2D) -> np.ndarray:
    """Materialize the full gamma2[i, p, j, q] array from the offset kernel
    (reference/testing helper; memory grows as (N*W)^2)."""
    n, n_w = op.grid.n, op.grid.n_w
    i = np.arange(n)
    offset_idx = (i[None, :] - i[:, None]) + (n - 1)         # j - i + (N-1)
    return op.gamma2[offset_idx].transpose(0, 2, 1, 3)       # (i, p, j, q)


# ---------------------------------------------------------------------------
# operator cache
# ---------------------------------------------------------------------------

_MAGIC = b"RPO1"
_KIND_DENSE = 1
_KIND_KERNEL2D = 2


def _write_array(fh, arr: np.ndarray) -> None:
    data = np.ascontiguousarray(arr, dtype=np.float64)
    fh.write(struct.pack("<B", data.ndim))
    fh.write(struct.pack(f"<{data.ndim}q", *data.shape))
    fh.write(data.tobytes())


def _read_array(fh) -> np.ndarray:
    ndim, = struct.unpack("<B", fh.read(1))
    shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim))
    count = int(np.prod(shape))
    return np.frombuffer(fh.read(8 * count), dtype=np.float64).reshape(shape).copy()


class OperatorCache:
    """Binary on-disk cache of built operators, keyed by model, environment,
    grid signature and step size; payloads are row-major 64-bit floats."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _key(self, kind: int, model, env: MarketEnv, grid: LatticeGrid,
             tau: float, shift: np.ndarray | None) -> str:
        h = hashlib.sha256()
        h.update(struct.pack("<Bdd d", kind, env.r, env.carry_rate, tau))
        h.update(repr(sorted(model_to_dict(model).items())).encode())
        h.update(grid.signature())
        if shift is not None:
            h.update(np.ascontiguousarray(shift, dtype=np.float64).tobytes())
        return h.hexdigest()

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.op"

    def load_dense(self, model, env, grid, tau, shift=None) -> Dense1D | None:
        path = self._path(self._key(_KIND_DENSE, model, env, grid, tau, shift))
        if not path.exists():
            return None
        with open(path, "rb") as fh:
            magic, kind = fh.read(4), struct.unpack("<B", fh.read(1))[0]
            if magic != _MAGIC or kind != _KIND_DENSE:
                return None
            tau_s, dy, toep = struct.unpack("<ddB", fh.read(17))
            matrix = _read_array(fh)
        return Dense1D(matrix=matrix, tau=tau_s, dy=dy, toeplitz=bool(toep))

    def store_dense(self, op: Dense1D, model, env, grid,
                    shift=None) -> Path:
        path = self._path(self._key(_KIND_DENSE, model, env, grid, op.tau, shift))
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<B", _KIND_DENSE))
            fh.write(struct.pack("<ddB", op.tau, op.dy, int(op.toeplitz)))
            _write_array(fh, op.matrix)
        return path

    def load_kernel2d(self, model, env, grid, fgrid, tau) -> Kernel2D | None:
        path = self._path(self._key(_KIND_KERNEL2D, model, env, grid, tau, None))
        if not path.exists():
            return None
        with open(path, "rb") as fh:
            magic, kind = fh.read(4), struct.unpack("<B", fh.read(1))[0]
            if magic != _MAGIC or kind != _KIND_KERNEL2D:
                return None
            tau_s, clipped = struct.unpack("<dd", fh.read(16))
            gamma2 = _read_array(fh)
            mix_re = _read_array(fh)
            mix_im = _read_array(fh)
        return Kernel2D(grid=grid, fgrid=fgrid, tau=tau_s,
                        mix=mix_re + 1j * mix_im, gamma2=gamma2,
                        clipped_mass=clipped)

    def store_kernel2d(self, op: Kernel2D, model, env) -> Path:
        path = self._path(self._key(_KIND_KERNEL2D, model, env, op.grid,
                                    op.tau, None))
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<B", _KIND_KERNEL2D))
            fh.write(struct.pack("<dd", op.tau, op.clipped_mass))
            _write_array(fh, op.gamma2)
            _write_array(fh, op.mix.real)
            _write_array(fh, op.mix.imag)
        return path
