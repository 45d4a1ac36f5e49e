"""Non-learned comparison reconstructions: zero-filling and ADMM-TV.

The ADMM solver addresses

    min_x  0.5 * || mask * F(x) - y ||^2  +  lambda_tv * TV(x)

with the splitting z = grad(x). Gradients use forward differences with a
replicate boundary (last row/column difference is zero), so the x-update is
solved by warm-started conjugate gradients rather than a spectral inverse.
"""

import numpy as np
from dataclasses import dataclass

from .errors import ConfigurationError, NumericalError, ShapeError
from .kspace import forward_fft2c, inverse_fft2c, zero_fill_recon, _mask_array


@dataclass
class AdmmConfig:
    lambda_tv: float = 1e-3
    rho: float = 1.0
    iters: int = 200
    tol: float = 1e-6
    cg_iters: int = 30          # inner x-update budget
    cg_tol: float = 1e-10

    def validate(self):
        if self.lambda_tv <= 0 or self.rho <= 0 or self.tol <= 0:
            raise ConfigurationError("lambda_tv, rho and tol must be positive")
        if not (0 < self.iters <= 10000):
            raise ConfigurationError(f"iters must be in [1, 10000], got {self.iters}")


def _grad(x):
    gx = np.zeros_like(x)
    gy = np.zeros_like(x)
    gx[:, :-1] = x[:, 1:] - x[:, :-1]
    gy[:-1, :] = x[1:, :] - x[:-1, :]
    return gx, gy


def _grad_adj(gx, gy):
    out = np.zeros_like(gx)
    out[:, 1:] += gx[:, :-1]
    out[:, :-1] -= gx[:, :-1]
    out[1:, :] += gy[:-1, :]
    out[:-1, :] -= gy[:-1, :]
    return out


def tv_norm(image):
    """Isotropic total variation (forward differences, replicate boundary)."""
    x = np.asarray(image)
    if x.ndim != 2:
        raise ShapeError(f"tv_norm expects a 2D image, got shape {x.shape}")
    gx, gy = _grad(x)
    return float(np.sum(np.sqrt(np.abs(gx) ** 2 + np.abs(gy) ** 2)))


def _tv_complex(x):
    gx, gy = _grad(x)
    return float(np.sum(np.sqrt(np.abs(gx) ** 2 + np.abs(gy) ** 2)))


def _cdot(a, b):
    return np.vdot(a, b).real


def _cg(apply_A, b, x0, iters, tol):
    """Conjugate gradients for a Hermitian PSD operator on complex images."""
    x = x0.copy()
    r = b - apply_A(x)
    p = r.copy()
    rs = _cdot(r, r)
    b_norm = np.sqrt(_cdot(b, b))
    stop = max(tol * b_norm, 1e-300)
    for _ in range(iters):
        if np.sqrt(rs) <= stop:
            break
        Ap = apply_A(p)
        alpha = rs / _cdot(p, Ap)
        x += alpha * p
        r -= alpha * Ap
        rs_new = _cdot(r, r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def reconstruct_admm_tv(measured, mask, cfg: AdmmConfig | None = None, return_history=False):
    """ADMM-TV reconstruction from undersampled k-space; returns a magnitude image.

    Initialized at the zero-filled solution. The recorded objective
    0.5*||mask*F(x) - y||^2 + lambda_tv*TV(x) is non-increasing across outer
    iterations (up to solver slack); a NaN objective raises NumericalError
    naming the iteration.
    """
    cfg = cfg or AdmmConfig()
    cfg.validate()
    y = np.asarray(measured, dtype=np.complex128)
    m = _mask_array(mask).astype(float)
    if y.shape != m.shape:
        raise ShapeError(f"measured shape {y.shape} != mask shape {m.shape}")

    y = y * m
    x = inverse_fft2c(y)
    # split variable starts consistent with the iterate (z = grad x, u = 0);
    # starting z at zero makes the first x-update over-smooth and the
    # objective jump upward before descending
    zx, zy = _grad(x)
    ux, uy = np.zeros_like(zx), np.zeros_like(zy)
    rho, lam = cfg.rho, cfg.lambda_tv

    def apply_A(v):
        data = inverse_fft2c(m * forward_fft2c(v))
        return data + rho * _grad_adj(*_grad(v))

    def objective(v):
        resid = m * forward_fft2c(v) - y
        return 0.5 * _cdot(resid, resid) + lam * _tv_complex(v)

    rhs_data = inverse_fft2c(m * y)  # = F^H M^H y since mask is 0/1
    history = [objective(x)]
    if np.isnan(history[0]):
        raise NumericalError("ADMM objective is NaN at iteration 0")

    for it in range(1, cfg.iters + 1):
        rhs = rhs_data + rho * _grad_adj(zx - ux, zy - uy)
        x_prev = x
        zx_prev, zy_prev = zx, zy
        x = _cg(apply_A, rhs, x, cfg.cg_iters, cfg.cg_tol)

        vx, vy = _grad(x)
        vx = vx + ux
        vy = vy + uy
        mag = np.sqrt(np.abs(vx) ** 2 + np.abs(vy) ** 2)
        scale = np.maximum(1.0 - (lam / rho) / np.maximum(mag, 1e-300), 0.0)
        zx, zy = scale * vx, scale * vy

        gx, gy = _grad(x)
        ux = ux + gx - zx
        uy = uy + gy - zy

        obj = objective(x)
        if np.isnan(obj):
            raise NumericalError(f"ADMM objective is NaN at iteration {it}")
        history.append(obj)

        # both blocks must have stabilized: right after warm init the first
        # x-update is a no-op while the shrinkage step still moves z
        rel_x = np.linalg.norm(x - x_prev) / max(np.linalg.norm(x_prev), 1e-300)
        dz = np.sqrt(np.linalg.norm(zx - zx_prev) ** 2 + np.linalg.norm(zy - zy_prev) ** 2)
        nz = max(np.sqrt(np.linalg.norm(zx_prev) ** 2 + np.linalg.norm(zy_prev) ** 2), 1e-300)
        if max(rel_x, dz / nz) < cfg.tol:
            break

    image = np.clip(np.abs(x), 0.0, 1.0)
    if return_history:
        return image, history
    return image


def reconstruct_zero_fill(measured, mask):
    """Zero-filled baseline on already-measured (masked) k-space."""
    y = np.asarray(measured, dtype=np.complex128)
    m = _mask_array(mask).astype(float)
    if y.shape != m.shape:
        raise ShapeError(f"measured shape {y.shape} != mask shape {m.shape}")
    return zero_fill_recon(y * m)
