"""Fourier-multiplier operators on box fields.

Everything here acts in spectral space and returns a field in the caller's
representation. Zero-wavenumber convention: inverse Laplacian, Riesz
transforms and the Leray correction act as 0 on the mean mode, so the mean
of a divergence-free field is preserved.
"""

from __future__ import annotations

import numpy as np
import scipy.fft

from .fields import PHYSICAL, SPECTRAL, BoxField

__all__ = [
    "leray_project",
    "riesz",
    "heat_flow",
    "oseen_step",
    "gradient",
    "divergence",
    "inv_laplace",
    "laplacian",
    "partial_derivative",
    "pressure_from_velocity",
    "galilean_shift",
    "dealias",
    "tensor_product",
    "grad_norm_squared_field",
]


def _spectral(f: BoxField) -> np.ndarray:
    return f.as_spectral().values


def _wrap(f: BoxField, coeff: np.ndarray, components: int | None = None) -> BoxField:
    out = BoxField(f.grid, coeff, SPECTRAL)
    return out.to_physical() if f.representation == PHYSICAL else out


def leray_project(v: BoxField) -> BoxField:
    """P v = v - grad(inv_laplace(div v)); idempotent, output solenoidal."""
    if v.components != 3:
        raise ValueError("leray_project expects a 3-component field")
    c = _spectral(v)
    kx, ky, kz = v.grid.wavenumbers()
    kk = v.grid.k_squared()
    kk_safe = np.where(kk == 0.0, 1.0, kk)
    kdotu = (kx * c[0] + ky * c[1] + kz * c[2]) / kk_safe
    out = np.empty_like(c)
    out[0] = c[0] - kx * kdotu
    out[1] = c[1] - ky * kdotu
    out[2] = c[2] - kz * kdotu
    return _wrap(v, out)


def riesz(f: BoxField, j: int) -> BoxField:
    """Riesz transform R_j, multiplier i k_j / |k| (0 on the mean mode)."""
    c = _spectral(f)
    k = f.grid.wavenumbers()[j]
    kk = f.grid.k_squared()
    kmag = np.sqrt(np.where(kk == 0.0, 1.0, kk))
    mult = np.broadcast_to(1j * k, c.shape[1:]) / kmag
    return _wrap(f, c * mult[None])


def heat_flow(f: BoxField, t: float) -> BoxField:
    """Heat semigroup, multiplier exp(-|k|^2 t)."""
    if t < 0:
        raise ValueError(f"heat_flow needs t >= 0, got {t}")
    if t == 0:
        return f
    c = _spectral(f)
    return _wrap(f, c * np.exp(-f.grid.k_squared_full() * t)[None])


def partial_derivative(f: BoxField, eta) -> BoxField:
    """Mixed derivative d^eta for a multiindex eta = (e1, e2, e3)."""
    c = _spectral(f)
    kx, ky, kz = f.grid.wavenumbers()
    mult = (1j * kx) ** eta[0] * (1j * ky) ** eta[1] * (1j * kz) ** eta[2]
    return _wrap(f, c * mult[None] if mult.ndim == 3 else c * mult)


def gradient(f: BoxField) -> BoxField:
    """Gradient; c components in, 3c components out, ordered d_j f_c."""
    c = _spectral(f)
    ks = f.grid.wavenumbers()
    out = np.empty((3 * f.components,) + c.shape[1:], dtype=complex)
    for j in range(3):
        out[j * f.components : (j + 1) * f.components] = 1j * ks[j] * c
    return _wrap(f, out)


def divergence(f: BoxField) -> BoxField:
    """Divergence of a vector (3 -> 1) or tensor (9 -> 3, contracting d_j F_{jk})."""
    c = _spectral(f)
    kx, ky, kz = f.grid.wavenumbers()
    if f.components == 3:
        out = (1j * kx * c[0] + 1j * ky * c[1] + 1j * kz * c[2])[None]
    elif f.components == 9:
        F = c.reshape(3, 3, *c.shape[1:])
        out = np.empty((3,) + c.shape[1:], dtype=complex)
        for k in range(3):
            out[k] = 1j * (kx * F[0, k] + ky * F[1, k] + kz * F[2, k])
    else:
        raise ValueError("divergence expects 3 or 9 components")
    return _wrap(f, out)


def laplacian(f: BoxField) -> BoxField:
    c = _spectral(f)
    return _wrap(f, -f.grid.k_squared()[None] * c)


def inv_laplace(f: BoxField) -> BoxField:
    """Inverse Laplacian with zero mean mode."""
    c = _spectral(f)
    kk = f.grid.k_squared_full()
    kk_safe = kk.copy()
    kk_safe[0, 0, 0] = 1.0
    out = -c / kk_safe[None]
    out[:, 0, 0, 0] = 0.0
    return _wrap(f, out)


def oseen_step(F: BoxField, t: float) -> BoxField:
    """exp(t Delta) P div(F) for a stress tensor F; the Duhamel integrand kernel."""
    if t <= 0:
        raise ValueError(f"oseen_step needs t > 0, got {t}")
    if F.components != 9:
        raise ValueError("oseen_step expects a 9-component tensor")
    div = divergence(F.as_spectral())
    out = leray_project(div)
    decay = np.exp(-F.grid.k_squared_full() * t)
    coeff = out.values * decay[None]
    res = BoxField(F.grid, coeff, SPECTRAL)
    return res.to_physical() if F.representation == PHYSICAL else res


def dealias(f: BoxField) -> BoxField:
    """2/3-rule truncation of a spectral or physical field."""
    c = _spectral(f)
    return _wrap(f, c * f.grid.dealias_mask()[None])


def tensor_product(u: BoxField, v: BoxField, dealiased: bool = True) -> BoxField:
    """u (x) v computed in physical space, optionally 2/3-truncated, spectral out."""
    up = u.as_physical().values
    vp = v.as_physical().values
    n = u.grid.n
    T = np.einsum("i...,j...->ij...", up, vp).reshape(9, n, n, n)
    out = BoxField(u.grid, T, PHYSICAL).to_spectral()
    return dealias(out) if dealiased else out


def pressure_from_velocity(u: BoxField) -> BoxField:
    """P = -inv_laplace(div div (u (x) u)), zero mode set to 0."""
    if u.components != 3:
        raise ValueError("pressure_from_velocity expects a velocity field")
    T = tensor_product(u, u)
    dd = divergence(divergence(T))  # scalar
    p = inv_laplace(dd)
    return p.to_physical() if u.representation == PHYSICAL else p


def _axis_phase(grid, d: float) -> np.ndarray:
    """1D shift phase e^{i k d}; the self-paired Nyquist mode takes cos(k d)
    so real fields stay real (and lattice shifts remain exact)."""
    k1 = 2.0 * np.pi * scipy.fft.fftfreq(grid.n, d=grid.h)
    phase = np.exp(1j * k1 * d)
    phase[grid.n // 2] = np.cos(k1[grid.n // 2] * d)
    return phase


def galilean_shift(f: BoxField, xi, t: float) -> BoxField:
    """Resample at x + xi*t via the exact spectral phase shift e^{i k . xi t}."""
    xi = np.asarray(xi, dtype=float)
    d = xi * t
    if not np.any(d):
        return f
    c = _spectral(f)
    grid = f.grid
    phase = (
        _axis_phase(grid, d[0])[:, None, None]
        * _axis_phase(grid, d[1])[None, :, None]
        * _axis_phase(grid, d[2])[None, None, :]
    )
    return _wrap(f, c * phase[None])


def grad_norm_squared_field(u: BoxField) -> np.ndarray:
    """|grad u|^2 = sum_{j,c} (d_j u_c)^2 on the grid, as a plain array."""
    g = gradient(u.as_spectral()).to_physical()
    return np.einsum("c...,c...->...", g.values, g.values)
