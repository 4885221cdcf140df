"""Inverse solvers recovering a scene from a lensless measurement.

``admm_reconstruct`` minimizes

    1/2 ||C H v - b||^2 + tau ||D v||_1 + I(v >= 0)

over the zero-padded grid with the splitting ``u = H v`` (data, crop
handled in the u-update), ``z = D v`` (anisotropic TV, circular forward
differences) and ``w = v`` (non-negativity).  The v-update is diagonal in
the Fourier domain.  ``fista_reconstruct`` runs accelerated projected
gradient on the scene grid; ``wiener_reconstruct`` is a one-shot baseline.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import fft

from .imgcore import Image, as_image
from .optics import CropConvolution, DegeneratePsfError, GeometryError, Psf, SensorMeasurement

SOLVERS = ("admm", "fista", "wiener", "none")


class SolverDivergedError(RuntimeError):
    def __init__(self, iteration: int):
        super().__init__(f"solver diverged: non-finite values at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class SolverConfig:
    tau: float = 1e-4
    mu1: float = 1e-1
    mu2: float = 1e-3
    mu3: float = 1e-4
    max_iters: int = 100
    tol: float = 1e-4
    nonneg: bool = True
    wiener_snr: float = 1e3

    def __post_init__(self):
        if min(self.mu1, self.mu2, self.mu3) <= 0:
            raise ValueError("penalty parameters mu1, mu2, mu3 must be > 0")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.wiener_snr <= 0:
            raise ValueError("wiener_snr must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SolveDiagnostics:
    iterations_run: int = 0
    primal_residual_history: list[float] = field(default_factory=list)
    data_fidelity_history: list[float] = field(default_factory=list)
    elapsed: float = 0.0
    restarts: list[int] = field(default_factory=list)

    def to_dict(self, timing: bool = True) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("elapsed")
        return d


def _measurement(meas) -> np.ndarray:
    return as_image(meas.data if isinstance(meas, SensorMeasurement) else meas)


def _check(meas: np.ndarray, psf: Psf) -> CropConvolution:
    if meas.shape != psf.shape:
        raise GeometryError(f"measurement {meas.shape} and PSF {psf.shape} dimensions differ")
    if not np.any(psf.kernel > 0):
        raise DegeneratePsfError("degenerate PSF: kernel has no positive mass")
    return psf.operator


def _diff_spectrum(shape: tuple[int, int]) -> np.ndarray:
    """Fourier symbol of D^T D for circular forward differences on ``shape``."""
    h, w = shape
    ky = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(h) / h)
    kx = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(w // 2 + 1) / w)
    return ky[:, None] + kx[None, :]


def _grad(v: np.ndarray, gy: np.ndarray, gx: np.ndarray) -> None:
    """Circular forward differences of ``v`` written into ``gy``, ``gx``."""
    np.subtract(v[1:], v[:-1], out=gy[:-1])
    np.subtract(v[0], v[-1], out=gy[-1])
    np.subtract(v[:, 1:], v[:, :-1], out=gx[:, :-1])
    np.subtract(v[:, 0], v[:, -1], out=gx[:, -1])


def _grad_adjoint(gy: np.ndarray, gx: np.ndarray, out: np.ndarray) -> np.ndarray:
    np.subtract(gy[:-1], gy[1:], out=out[1:])
    np.subtract(gy[-1], gy[0], out=out[0])
    out[:, 1:] += gx[:, :-1]
    out[:, 1:] -= gx[:, 1:]
    out[:, 0] += gx[:, -1]
    out[:, 0] -= gx[:, 0]
    return out


def _soft(x: np.ndarray, t: float, out: np.ndarray) -> np.ndarray:
    """Soft threshold ``sign(x) max(|x| - t, 0)``, as ``x - clip(x, -t, t)``."""
    np.clip(x, -t, t, out=out)
    return np.subtract(x, out, out=out)


def _finish(v: np.ndarray) -> np.ndarray:
    return np.clip(v.astype(np.float64), 0.0, 1.0)


def _sumsq(a: np.ndarray) -> float:
    return float(np.vdot(a, a))


def admm_reconstruct(meas, psf: Psf, cfg: SolverConfig | None = None) -> tuple[Image, SolveDiagnostics]:
    """ADMM with TV and non-negativity; returns the clamped central crop.

    Iterates are kept in single precision, which halves the cost of every
    transform and elementwise update; the output is returned as float64.
    """
    cfg = cfg or SolverConfig()
    b = _measurement(meas)
    op = _check(b, psf)
    start = time.perf_counter()
    shape = op.padded_shape
    f32, c64 = np.float32, np.complex64
    H = op.spectrum
    mu1, mu2, mu3 = cfg.mu1, cfg.mu2, cfg.mu3
    use_tv = cfg.tau > 0

    denom = mu1 * np.abs(H) ** 2 + mu3
    if use_tv:
        denom = denom + mu2 * _diff_spectrum(shape)
    inv_den = (1.0 / denom).astype(f32)
    gain = (H / denom).conj().astype(c64)  # conj(H) / denom
    H32 = H.astype(c64)
    data_w = (1.0 / (op.pad(np.ones(op.shape)) + mu1)).astype(f32)
    ctb = op.pad(b).astype(f32)
    thresh = f32(cfg.tau / mu2)

    def zeros():
        return np.zeros(shape, dtype=f32)

    v, Hv, u, xi, w, rho, rhs, tmp = (zeros() for _ in range(8))
    if use_tv:
        dy, dx, zy, zx, eta_y, eta_x, ty, tx = (zeros() for _ in range(8))

    diag = SolveDiagnostics()
    half_b2 = 0.5 * float(np.sum(b * b))
    for it in range(1, cfg.max_iters + 1):
        # data split: u = (C^T C + mu1 I)^-1 (xi + mu1 H v + C^T b)
        np.multiply(Hv, f32(mu1), out=u)
        u += xi
        u += ctb
        u *= data_w
        # non-negativity split
        np.multiply(rho, f32(1.0 / mu3), out=w)
        w += v
        if cfg.nonneg:
            np.maximum(w, 0.0, out=w)
        # v-update right-hand side: mu3 w - rho + D^T (mu2 z - eta)
        np.multiply(w, f32(mu3), out=rhs)
        rhs -= rho
        if use_tv:
            # z-update: soft(D v + eta / mu2, tau / mu2)
            np.multiply(eta_y, f32(1.0 / mu2), out=ty)
            ty += dy
            _soft(ty, thresh, zy)
            np.multiply(eta_x, f32(1.0 / mu2), out=tx)
            tx += dx
            _soft(tx, thresh, zx)
            np.multiply(zy, f32(mu2), out=ty)
            ty -= eta_y
            np.multiply(zx, f32(mu2), out=tx)
            tx -= eta_x
            rhs += _grad_adjoint(ty, tx, tmp)
        # v-update, diagonal in frequency
        np.multiply(u, f32(mu1), out=tmp)
        tmp -= xi
        V = fft.rfft2(rhs)
        V *= inv_den
        V += gain * fft.rfft2(tmp)
        v = fft.irfft2(V, s=shape)
        V *= H32
        Hv = fft.irfft2(V, s=shape)
        if not (np.isfinite(np.sum(v)) and np.isfinite(np.sum(Hv))):
            raise SolverDivergedError(it)

        # dual ascent
        np.subtract(Hv, u, out=tmp)
        num = _sumsq(tmp)
        tmp *= f32(mu1)
        xi += tmp
        np.subtract(v, w, out=tmp)
        num += _sumsq(tmp)
        tmp *= f32(mu3)
        rho += tmp
        den = _sumsq(u) + _sumsq(w)
        if use_tv:
            _grad(v, dy, dx)
            np.subtract(dy, zy, out=ty)
            np.subtract(dx, zx, out=tx)
            num += _sumsq(ty) + _sumsq(tx)
            den += _sumsq(zy) + _sumsq(zx)
            ty *= f32(mu2)
            tx *= f32(mu2)
            eta_y += ty
            eta_x += tx

        resid = float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))
        fit = op.crop(Hv).astype(np.float64) - b
        diag.primal_residual_history.append(resid)
        diag.data_fidelity_history.append(0.5 * float(np.sum(fit * fit)))
        diag.iterations_run = it
        if resid < cfg.tol and half_b2 > 0:
            break

    diag.elapsed = time.perf_counter() - start
    out = _finish(op.crop(v))
    if not np.all(np.isfinite(out)):
        raise SolverDivergedError(diag.iterations_run)
    return out, diag


def estimate_lipschitz(psf: Psf, iters: int = 50, seed: int = 0) -> float:
    """Largest eigenvalue of ``(C H)^T (C H)`` on the scene grid, by power iteration."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    op = psf.operator
    # the normal operator has nonnegative entries, so its top eigenvector is
    # nonnegative; a positive start vector avoids slow sign-cancelling modes
    x = np.random.default_rng(seed).random(op.shape) + 0.5
    x /= np.linalg.norm(x)
    L = 0.0
    for _ in range(iters):
        y = op.adjoint(op.forward(x))
        L = float(np.vdot(x, y))
        norm = np.linalg.norm(y)
        if norm == 0:
            return 0.0
        x = y / norm
    return L


def fista_reconstruct(meas, psf: Psf, cfg: SolverConfig | None = None) -> tuple[Image, SolveDiagnostics]:
    """Accelerated projected gradient on ``1/2 ||C H x - b||^2``, x >= 0.

    Step size is ``1/L``.  When an accelerated step would increase the data
    fidelity the momentum is reset and a plain projected step is taken from
    the previous iterate, so the fidelity history never increases.
    """
    cfg = cfg or SolverConfig()
    b = _measurement(meas)
    op = _check(b, psf)
    start = time.perf_counter()
    L = estimate_lipschitz(psf)
    if L <= 0:
        raise DegeneratePsfError("degenerate PSF: zero operator norm")
    step = 1.0 / (1.01 * L)

    def prox(z):
        return np.maximum(z, 0.0) if cfg.nonneg else z

    x = np.zeros(op.shape)
    Ax = np.zeros(op.shape)
    y, Ay = x, Ax
    t = 1.0
    f_x = 0.5 * float(np.sum(b * b))
    diag = SolveDiagnostics()
    for it in range(1, cfg.max_iters + 1):
        x_new = prox(y - step * op.adjoint(Ay - b))
        Ax_new = op.forward(x_new)
        f_new = 0.5 * float(np.sum((Ax_new - b) ** 2))
        if f_new > f_x:
            diag.restarts.append(it)
            t = 1.0
            x_new = prox(x - step * op.adjoint(Ax - b))
            Ax_new = op.forward(x_new)
            f_new = 0.5 * float(np.sum((Ax_new - b) ** 2))
        if not np.isfinite(f_new):
            raise SolverDivergedError(it)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_next
        y = x_new + beta * (x_new - x)
        Ay = Ax_new + beta * (Ax_new - Ax)
        norm_new = float(np.linalg.norm(x_new))
        resid = float(np.linalg.norm(x_new - x)) / norm_new if norm_new > 0 else 0.0
        x, Ax, f_x, t = x_new, Ax_new, f_new, t_next
        diag.primal_residual_history.append(resid)
        diag.data_fidelity_history.append(f_new)
        diag.iterations_run = it
        if it > 1 and resid < cfg.tol:
            break
    diag.elapsed = time.perf_counter() - start
    return _finish(x), diag


def wiener_reconstruct(meas, psf: Psf, snr_param: float = 1e3) -> Image:
    """Regularized inverse ``conj(H) / (|H|^2 + 1/snr)`` on the padded grid."""
    if snr_param <= 0:
        raise ValueError("snr_param must be > 0")
    b = _measurement(meas)
    op = _check(b, psf)
    H = op.spectrum
    B = fft.rfft2(op.pad(b))
    X = np.conj(H) * B / (np.abs(H) ** 2 + 1.0 / snr_param)
    return _finish(op.crop(fft.irfft2(X, s=op.padded_shape)))


def reconstruct(meas, psf: Psf, solver: str = "admm", cfg: SolverConfig | None = None
                ) -> tuple[Image, SolveDiagnostics | None]:
    """Dispatch by solver name; ``"none"`` returns the measurement unchanged."""
    cfg = cfg or SolverConfig()
    if solver == "admm":
        return admm_reconstruct(meas, psf, cfg)
    if solver == "fista":
        return fista_reconstruct(meas, psf, cfg)
    if solver == "wiener":
        return wiener_reconstruct(meas, psf, cfg.wiener_snr), None
    if solver == "none":
        return _measurement(meas), None
    raise ValueError(f"unknown solver {solver!r}; expected one of {', '.join(SOLVERS)}")
