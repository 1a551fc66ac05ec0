"""Deterministic test-field generators: Gaussians, mollifier bumps, seeded
divergence-free random fields.

All generators are pure: identical arguments give identical output arrays.
Data are compactly supported or rapidly decaying so weighted integrals over
the periodic box stand in for whole-space ones.
"""

from __future__ import annotations

import warnings

import numpy as np

from .fields import PHYSICAL, SPECTRAL, BoxField, BoxGrid, fft_workers
import scipy.fft

__all__ = [
    "TruncationWarning",
    "gaussian_lq_norm",
    "gen_gaussian",
    "gen_translated_bump",
    "gen_divfree_random",
    "mollifier_profile",
    "MOLLIFIER_RADIUS",
]

MOLLIFIER_RADIUS = 1.0


class TruncationWarning(UserWarning):
    """The generated profile does not decay safely inside the box."""


def gaussian_lq_norm(s: float, q: float) -> float:
    """Closed form ||G_s||_{L^q} = (4 pi s)^{-3(q-1)/(2q)} q^{-3/(2q)}."""
    if np.isinf(q):
        return (4.0 * np.pi * s) ** -1.5
    return (4.0 * np.pi * s) ** (-1.5 * (q - 1.0) / q) * q ** (-1.5 / q)


def gen_gaussian(grid: BoxGrid, s: float, x0=(0.0, 0.0, 0.0)) -> BoxField:
    """Heat-kernel Gaussian G_s(x - x0) = (4 pi s)^{-3/2} exp(-|x - x0|^2 / 4s).

    Unit mass on the box to 1e-8 when the decay margin 4*sqrt(s) <= L holds;
    a violated margin warns rather than failing.
    """
    if s <= 0:
        raise ValueError(f"width parameter s must be positive, got {s}")
    if 4.0 * np.sqrt(s) > grid.L:
        warnings.warn(
            f"gaussian with s={s} has 4*sqrt(s)={4 * np.sqrt(s):.3g} > L={grid.L}; "
            "box truncation will be visible",
            TruncationWarning,
        )
    X, Y, Z = grid.meshgrid()
    x0 = np.asarray(x0, dtype=float)
    r2 = (X - x0[0]) ** 2 + (Y - x0[1]) ** 2 + (Z - x0[2]) ** 2
    vals = (4.0 * np.pi * s) ** -1.5 * np.exp(-r2 / (4.0 * s))
    return BoxField(grid, vals[None], PHYSICAL)


def mollifier_profile(r: np.ndarray, radius: float = MOLLIFIER_RADIUS) -> np.ndarray:
    """Classical bump exp(1/((r/radius)^2 - 1)) inside r < radius, 0 outside."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    u = r / radius
    inside = u < 1.0
    with np.errstate(divide="ignore"):
        out[inside] = np.exp(1.0 / (u[inside] ** 2 - 1.0))
    return out


def gen_translated_bump(grid: BoxGrid, K: float, xi=(1.0, 0.0, 0.0), radius: float = MOLLIFIER_RADIUS) -> BoxField:
    """Translate of the fixed mollifier bump, phi_K(x) = phi(x - K*xi).

    xi is normalized to a unit vector. The support must stay one cell inside
    the box: K + radius <= L - h.
    """
    xi = np.asarray(xi, dtype=float)
    norm = np.linalg.norm(xi)
    if norm == 0:
        raise ValueError("direction xi must be nonzero")
    xi = xi / norm
    if K + radius > grid.L - grid.h:
        raise ValueError(
            f"bump support leaves the box: K + radius = {K + radius:.3g} > L - h = {grid.L - grid.h:.3g}"
        )
    X, Y, Z = grid.meshgrid()
    c = K * xi
    r = np.sqrt((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2)
    return BoxField(grid, mollifier_profile(r, radius)[None], PHYSICAL)


def default_spectrum(k: np.ndarray, k_peak: float = 2.0) -> np.ndarray:
    """Band-limited amplitude profile k^2 exp(-(k/k_peak)^2)."""
    return k**2 * np.exp(-((k / k_peak) ** 2))


def gen_divfree_random(grid: BoxGrid, seed: int, spectrum=default_spectrum) -> BoxField:
    """Seeded random vector field, exactly divergence-free in spectral form.

    White noise is shaped by spectrum(|k|) and Leray-projected; the mean mode
    is zeroed. Reproducible: the same seed gives bit-identical fields.
    """
    rng = np.random.default_rng(seed)
    n = grid.n
    noise = rng.standard_normal((3, n, n, n))
    coeff = scipy.fft.fftn(noise, axes=(1, 2, 3), workers=fft_workers()) / n**3
    kx, ky, kz = grid.wavenumbers()
    kk = grid.k_squared()
    amp = spectrum(np.sqrt(kk))
    amp[kk == 0.0] = 0.0
    coeff *= amp[None]
    # Leray projection: remove the longitudinal part
    kk_safe = np.where(kk == 0.0, 1.0, kk)
    kdotu = kx * coeff[0] + ky * coeff[1] + kz * coeff[2]
    coeff[0] -= kx * kdotu / kk_safe
    coeff[1] -= ky * kdotu / kk_safe
    coeff[2] -= kz * kdotu / kk_safe
    spec = BoxField(grid, coeff, SPECTRAL)
    phys = spec.to_physical()
    # normalize to unit L2 so amplitudes are comparable across seeds
    norm = np.sqrt(phys.l2_norm_squared())
    return phys * (1.0 / norm)
