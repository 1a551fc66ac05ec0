"""Periodic box fields, spherical sampling grids, and the NSF1 field file format.

The box is [-L, L)^3 with n points per axis, treated as 2L-periodic. Fields
live either in physical space (real values) or spectral space (complex DFT
coefficients, forward transform divided by n^3 so a constant field c has
zero mode exactly c). The spherical grid pairs Gauss-Legendre radial nodes
on (0, rho_max] with a Gauss-Legendre x uniform-azimuth product rule on the
sphere; it has no node at the origin, so singular radial weights |x|^beta
stay finite on it.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
from scipy import ndimage

__all__ = [
    "BoxGrid",
    "BoxField",
    "SphericalGrid",
    "SphereSamples",
    "RepresentationError",
    "fft_workers",
    "read_field",
    "write_field",
]

PHYSICAL = "physical"
SPECTRAL = "spectral"

_MAGIC = b"NSF1"


class RepresentationError(ValueError):
    """Raised when an operation receives a field in the wrong representation."""


def fft_workers() -> int:
    """Worker count for scipy.fft, capped by NSE_LAB_THREADS if set."""
    cap = os.environ.get("NSE_LAB_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n


@dataclass(frozen=True)
class BoxGrid:
    """Uniform periodic grid on [-L, L)^3 with n points per axis."""

    n: int
    L: float

    def __post_init__(self):
        if self.n < 8 or self.n % 2 != 0:
            raise ValueError(f"n must be even and >= 8, got {self.n}")
        if self.L <= 0:
            raise ValueError(f"L must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    def axis(self) -> np.ndarray:
        """Grid coordinates x_i = -L + i*h along one axis."""
        return -self.L + self.h * np.arange(self.n)

    def meshgrid(self):
        x = self.axis()
        return np.meshgrid(x, x, x, indexing="ij")

    def radius(self) -> np.ndarray:
        """|x| at every grid point."""
        X, Y, Z = self.meshgrid()
        return np.sqrt(X * X + Y * Y + Z * Z)

    def wavenumbers(self):
        """(kx, ky, kz) broadcastable arrays; fundamental wavenumber pi/L.

        The unpaired Nyquist mode is zeroed (standard pseudo-spectral
        convention for even n) so that every multiplier built from these
        arrays maps real fields to real fields.
        """
        k1 = 2.0 * np.pi * scipy.fft.fftfreq(self.n, d=self.h)
        k1[self.n // 2] = 0.0
        return (
            k1[:, None, None],
            k1[None, :, None],
            k1[None, None, :],
        )

    def k_squared(self) -> np.ndarray:
        """|k|^2 built from the Nyquist-zeroed wavenumbers (pairs with gradient)."""
        kx, ky, kz = self.wavenumbers()
        return kx * kx + ky * ky + kz * kz

    def k_squared_full(self) -> np.ndarray:
        """|k|^2 with the Nyquist mode kept; correct damping for the heat semigroup."""
        k1 = 2.0 * np.pi * scipy.fft.fftfreq(self.n, d=self.h)
        kx, ky, kz = k1[:, None, None], k1[None, :, None], k1[None, None, :]
        return kx * kx + ky * ky + kz * kz

    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask: keep integer modes with |m_j| <= n//3 on every axis."""
        m = scipy.fft.fftfreq(self.n) * self.n
        keep = np.abs(m) <= self.n // 3
        return (
            keep[:, None, None] & keep[None, :, None] & keep[None, None, :]
        )

    @property
    def cell_volume(self) -> float:
        return self.h**3


@dataclass(frozen=True)
class BoxField:
    """Scalar (1), vector (3) or tensor (9) field on a BoxGrid.

    values has shape (components, n, n, n); real for physical fields,
    complex for spectral ones. Instances are immutable; operations return
    new fields.
    """

    grid: BoxGrid
    values: np.ndarray
    representation: str = PHYSICAL

    def __post_init__(self):
        v = self.values
        if v.ndim == 3:
            v = v[None]
        n = self.grid.n
        if v.shape[1:] != (n, n, n):
            raise ValueError(f"values shape {v.shape} does not match grid n={n}")
        if v.shape[0] not in (1, 3, 9):
            raise ValueError(f"components must be 1, 3 or 9, got {v.shape[0]}")
        if self.representation == PHYSICAL:
            if np.iscomplexobj(v):
                raise RepresentationError("physical fields must be real-valued")
            v = np.ascontiguousarray(v, dtype=np.float64)
        elif self.representation == SPECTRAL:
            v = np.ascontiguousarray(v, dtype=np.complex128)
        else:
            raise RepresentationError(f"unknown representation {self.representation!r}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def components(self) -> int:
        return self.values.shape[0]

    def is_physical(self) -> bool:
        return self.representation == PHYSICAL

    def to_spectral(self) -> "BoxField":
        """Forward DFT, normalized by n^3 (a constant c maps to zero mode c)."""
        if self.representation != PHYSICAL:
            raise RepresentationError("to_spectral expects a physical field")
        n3 = self.grid.n**3
        coeff = scipy.fft.fftn(self.values, axes=(1, 2, 3), workers=fft_workers()) / n3
        return BoxField(self.grid, coeff, SPECTRAL)

    def to_physical(self) -> "BoxField":
        """Inverse DFT; values must be Hermitian-symmetric so the result is real."""
        if self.representation != SPECTRAL:
            raise RepresentationError("to_physical expects a spectral field")
        n3 = self.grid.n**3
        out = scipy.fft.ifftn(self.values * n3, axes=(1, 2, 3), workers=fft_workers())
        imag = np.max(np.abs(out.imag))
        scale = max(np.max(np.abs(out.real)), 1e-300)
        if imag > 1e-8 * scale:
            raise RepresentationError(
                f"spectral values are not Hermitian-symmetric (imag/real = {imag / scale:.2e})"
            )
        return BoxField(self.grid, np.ascontiguousarray(out.real), PHYSICAL)

    def as_physical(self) -> "BoxField":
        return self if self.representation == PHYSICAL else self.to_physical()

    def as_spectral(self) -> "BoxField":
        return self if self.representation == SPECTRAL else self.to_spectral()

    def magnitude(self) -> np.ndarray:
        """Pointwise Euclidean magnitude over components (physical only)."""
        if self.representation != PHYSICAL:
            raise RepresentationError("magnitude expects a physical field")
        if self.components == 1:
            return np.abs(self.values[0])
        return np.sqrt(np.einsum("c...,c...->...", self.values, self.values))

    def lp_norm(self, q: float) -> float:
        """Box L^q norm of the pointwise magnitude (q = inf for the sup)."""
        mag = self.magnitude()
        if np.isinf(q):
            return float(np.max(mag))
        return float((np.sum(mag**q) * self.grid.cell_volume) ** (1.0 / q))

    def l2_norm_squared(self) -> float:
        """Box ||f||_2^2, valid in either representation (Parseval)."""
        if self.representation == PHYSICAL:
            return float(np.sum(self.values**2) * self.grid.cell_volume)
        return float(np.sum(np.abs(self.values) ** 2) * (2.0 * self.grid.L) ** 3)

    def __add__(self, other: "BoxField") -> "BoxField":
        self._check_compatible(other)
        return BoxField(self.grid, self.values + other.values, self.representation)

    def __sub__(self, other: "BoxField") -> "BoxField":
        self._check_compatible(other)
        return BoxField(self.grid, self.values - other.values, self.representation)

    def __mul__(self, c: float) -> "BoxField":
        return BoxField(self.grid, self.values * c, self.representation)

    __rmul__ = __mul__

    def _check_compatible(self, other: "BoxField"):
        if self.grid != other.grid or self.representation != other.representation:
            raise ValueError("fields live on different grids or representations")

    def component(self, c: int) -> "BoxField":
        return BoxField(self.grid, self.values[c : c + 1], self.representation)


def _gauss_legendre_radial(n_r: int, rho_max: float):
    x, w = np.polynomial.legendre.leggauss(n_r)
    rho = 0.5 * rho_max * (x + 1.0)
    w_rho = 0.5 * rho_max * w * rho**2
    return rho, w_rho


@dataclass(frozen=True)
class SphericalGrid:
    """Product quadrature: radial shells x angular nodes on the unit sphere.

    Radial: n_r Gauss-Legendre nodes on (0, rho_max], weights absorbing the
    rho^2 measure so sum(w_i g(rho_i)) ~ int g rho^2 drho. Angular: n_theta
    Gauss-Legendre nodes in cos(theta) times 2*n_theta uniform azimuths,
    exact for spherical harmonics up to degree 2*n_theta - 1; the angular
    weights sum to 4*pi.
    """

    rho: np.ndarray
    w_rho: np.ndarray
    directions: np.ndarray  # (n_ang, 3) unit vectors
    w_ang: np.ndarray

    def __post_init__(self):
        if np.any(self.rho <= 0):
            raise ValueError("radial nodes must be strictly positive")
        total = float(np.sum(self.w_ang))
        if abs(total - 4.0 * np.pi) > 1e-12 * 4.0 * np.pi:
            raise ValueError(f"angular weights sum to {total}, expected 4*pi")
        for name in ("rho", "w_rho", "directions", "w_ang"):
            getattr(self, name).flags.writeable = False

    @classmethod
    def build(cls, n_r: int = 96, rho_max: float = 15.5, n_theta: int = 24) -> "SphericalGrid":
        rho, w_rho = _gauss_legendre_radial(n_r, rho_max)
        mu, w_mu = np.polynomial.legendre.leggauss(n_theta)
        n_phi = 2 * n_theta
        phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
        sin_t = np.sqrt(1.0 - mu**2)
        dirs = np.empty((n_theta, n_phi, 3))
        dirs[..., 0] = sin_t[:, None] * np.cos(phi)[None, :]
        dirs[..., 1] = sin_t[:, None] * np.sin(phi)[None, :]
        dirs[..., 2] = mu[:, None]
        w = np.broadcast_to(w_mu[:, None] * (np.pi / n_theta), (n_theta, n_phi))
        return cls(rho, w_rho, dirs.reshape(-1, 3).copy(), w.reshape(-1).copy())

    @classmethod
    def for_box(cls, grid: BoxGrid, n_r: int = 96, n_theta: int = 24) -> "SphericalGrid":
        """Grid covering the largest safely-sampled ball, rho_max = L - h."""
        return cls.build(n_r=n_r, rho_max=grid.L - grid.h, n_theta=n_theta)

    @property
    def n_r(self) -> int:
        return len(self.rho)

    @property
    def n_ang(self) -> int:
        return len(self.w_ang)

    @property
    def rho_max(self) -> float:
        return float(np.max(self.rho))

    def angular_order(self) -> int:
        n_theta = int(round(np.sqrt(self.n_ang / 2)))
        return 2 * n_theta - 1

    def points(self, center=None) -> np.ndarray:
        """All sample points rho_i * theta_j (+ center), shape (n_r, n_ang, 3)."""
        pts = self.rho[:, None, None] * self.directions[None, :, :]
        if center is not None:
            pts = pts + np.asarray(center)[None, None, :]
        return pts

    def radial_integral(self, shell_values: np.ndarray) -> float:
        """sum_i w_i g(rho_i) ~ int_0^rho_max g rho^2 drho."""
        return float(np.sum(self.w_rho * shell_values))

    def angular_lp(self, samples: np.ndarray, p: float) -> np.ndarray:
        """L^p(S^2) norm over the last axis using the angular weights."""
        if np.isinf(p):
            return np.max(np.abs(samples), axis=-1)
        return (np.sum(self.w_ang * np.abs(samples) ** p, axis=-1)) ** (1.0 / p)


@dataclass(frozen=True)
class SphereSamples:
    """Field values at the spherical-grid nodes, plus out-of-box flags."""

    sphere: SphericalGrid
    values: np.ndarray  # (components, n_r, n_ang)
    out_of_box: np.ndarray  # (n_r, n_ang) bool; flagged nodes evaluate to 0

    def magnitude(self) -> np.ndarray:
        if self.values.shape[0] == 1:
            return np.abs(self.values[0])
        return np.sqrt(np.einsum("c...,c...->...", self.values, self.values))


def sample_on_sphere(
    f: BoxField,
    sphere: SphericalGrid,
    center=None,
    order: int = 3,
) -> SphereSamples:
    """Interpolate a physical field at the spherical-grid nodes.

    order=3 uses a prefiltered periodic cubic B-spline (O(h^4) on smooth
    fields, needed by the 1%-level norm identities); order=1 is plain
    trilinear. Nodes farther than L - h from the box center are outside the
    safe sampling region: they evaluate to 0 and are flagged.
    """
    if f.representation != PHYSICAL:
        raise RepresentationError("sample_on_sphere expects a physical field")
    grid = f.grid
    pts = sphere.points(center)  # (n_r, n_ang, 3)
    out = np.sqrt(np.sum(pts * pts, axis=-1)) > (grid.L - grid.h)
    # map coordinates to fractional indices; grid-wrap handles periodicity
    idx = (pts + grid.L) / grid.h
    coords = np.moveaxis(idx, -1, 0)
    vals = np.empty((f.components, sphere.n_r, sphere.n_ang))
    for c in range(f.components):
        vals[c] = ndimage.map_coordinates(
            f.values[c], coords, order=order, mode="grid-wrap", prefilter=(order > 1)
        )
    vals[:, out] = 0.0
    return SphereSamples(sphere, vals, out)


def write_field(f: BoxField, path) -> None:
    """Write the NSF1 binary format.

    Layout: magic "NSF1", u32 n, f64 L, u8 components, u8 representation
    (0 physical / 1 spectral), then component-major z-fastest little-endian
    f64 values; spectral data is interleaved re/im.
    """
    rep = 0 if f.representation == PHYSICAL else 1
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IdBB", f.grid.n, f.grid.L, f.components, rep))
        if rep == 0:
            fh.write(f.values.astype("<f8").tobytes())
        else:
            inter = np.empty(f.values.shape + (2,))
            inter[..., 0] = f.values.real
            inter[..., 1] = f.values.imag
            fh.write(inter.astype("<f8").tobytes())


def read_field(path) -> BoxField:
    """Read a field written by write_field."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {_MAGIC!r}")
        n, L, comps, rep = struct.unpack("<IdBB", fh.read(14))
        grid = BoxGrid(n, L)
        count = comps * n**3
        if rep == 0:
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(comps, n, n, n)
            return BoxField(grid, data.copy(), PHYSICAL)
        raw = np.frombuffer(fh.read(16 * count), dtype="<f8").reshape(comps, n, n, n, 2)
        return BoxField(grid, raw[..., 0] + 1j * raw[..., 1], SPECTRAL)
