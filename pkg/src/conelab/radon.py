"""Parallel-beam limited-angle Radon transform, its adjoint, and FBP.

Geometry: direction ``v(theta) = (cos theta, sin theta)``, line parameter along
``v_perp = (-sin theta, cos theta)``. A sinogram is stored as an
``(n_p, n_theta)`` array, rows indexed by offset ``p`` in ``[-1, 1]`` and
columns by angle.

The forward map samples the bilinearly interpolated image along each line and
integrates with the trapezoid rule. ``radon_adjoint`` is its exact transpose
with respect to the quadrature inner products ``dp dtheta`` on sinograms and
``dx`` on images, so ``<R f, g> == <f, R* g>`` to rounding. ``backproject``
is the pixel-driven backprojection used by FBP; the transpose of bilinear ray
sampling blurs every view by a 2D tent and leaks energy across the cone
boundary, which the pixel-driven form avoids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from . import grid

# Gain that turns (1/4pi) R*_delta Lambda R_delta into the identity at
# delta = pi/2 when angles cover [-pi/2, pi/2] (half the circle). The
# continuum value is 2; the discrete calibration in tests/test_radon.py
# reproduces it to within 1%.
FBP_GAIN = 2.0

# samples per pixel width along each ray
RAY_OVERSAMPLE = 2


def trapezoid_weights(n: int, step: float) -> np.ndarray:
    w = np.full(n, step)
    if n > 1:
        w[0] = w[-1] = step / 2
    return w


@dataclass(frozen=True)
class AngleSet:
    """Uniform angles on ``[-delta, delta]`` with both endpoints included."""

    delta: float
    n_theta: int

    def __post_init__(self):
        if not 0 < self.delta <= np.pi / 2 + 1e-15:
            raise ValueError(f"delta must lie in (0, pi/2], got {self.delta!r}")
        if self.n_theta < 1:
            raise ValueError("angle set must not be empty")

    @classmethod
    def from_degrees(cls, delta_deg: float, n_theta: int | None = None) -> "AngleSet":
        if n_theta is None:
            n_theta = int(round(2 * delta_deg)) + 1
        return cls(np.deg2rad(delta_deg), n_theta)

    @property
    def thetas(self) -> np.ndarray:
        if self.n_theta == 1:
            return np.zeros(1)
        return np.linspace(-self.delta, self.delta, self.n_theta)

    @property
    def dtheta(self) -> float:
        if self.n_theta == 1:
            return 2 * self.delta
        return 2 * self.delta / (self.n_theta - 1)

    @property
    def weights(self) -> np.ndarray:
        """Angular quadrature (arc length on S_delta), trapezoid rule."""
        if self.n_theta == 1:
            return np.array([2 * self.delta])
        return trapezoid_weights(self.n_theta, self.dtheta)


@dataclass(frozen=True)
class Sinogram:
    values: np.ndarray
    angles: AngleSet
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[1] != self.angles.n_theta:
            raise ValueError(
                f"sinogram shape {vals.shape} inconsistent with {self.angles.n_theta} angles"
            )
        if vals.shape[0] < 2:
            raise ValueError("sinogram needs at least 2 offsets")
        object.__setattr__(self, "values", vals)

    @property
    def n_p(self) -> int:
        return self.values.shape[0]

    @property
    def offsets(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.n_p)

    @property
    def dp(self) -> float:
        return 2.0 / (self.n_p - 1)

    @property
    def quadrature(self) -> np.ndarray:
        """Weights ``dp * dtheta`` of the sinogram L2 inner product."""
        return np.outer(trapezoid_weights(self.n_p, self.dp), self.angles.weights)

    def with_values(self, values) -> "Sinogram":
        return Sinogram(values, self.angles, dict(self.meta))

    def norm(self) -> float:
        """``||g||_{L2(R x S_delta)}`` with the quadrature weights."""
        return float(np.sqrt(np.sum(self.quadrature * self.values**2)))

    def inner(self, other: "Sinogram") -> float:
        return float(np.sum(self.quadrature * self.values * other.values))


@numba.njit(cache=True)
def _project(img, thetas, offsets, n_t):
    n = img.shape[0]
    h = 2.0 / n
    dt = 2.0 / (n_t - 1)
    out = np.zeros((offsets.shape[0], thetas.shape[0]))
    for k in range(thetas.shape[0]):
        c = np.cos(thetas[k])
        s = np.sin(thetas[k])
        for ip in range(offsets.shape[0]):
            p = offsets[ip]
            acc = 0.0
            for it in range(n_t):
                t = -1.0 + it * dt
                wt = dt if 0 < it < n_t - 1 else 0.5 * dt
                u1 = (p * c - t * s + 1.0) / h - 0.5
                u2 = (p * s + t * c + 1.0) / h - 0.5
                j0 = int(np.floor(u1))
                i0 = int(np.floor(u2))
                if j0 < -1 or j0 >= n or i0 < -1 or i0 >= n:
                    continue
                fx = u1 - j0
                fy = u2 - i0
                v = 0.0
                if i0 >= 0:
                    if j0 >= 0:
                        v += (1.0 - fy) * (1.0 - fx) * img[i0, j0]
                    if j0 + 1 < n:
                        v += (1.0 - fy) * fx * img[i0, j0 + 1]
                if i0 + 1 < n:
                    if j0 >= 0:
                        v += fy * (1.0 - fx) * img[i0 + 1, j0]
                    if j0 + 1 < n:
                        v += fy * fx * img[i0 + 1, j0 + 1]
                acc += wt * v
            out[ip, k] = acc
    return out


@numba.njit(cache=True)
def _transpose(values, thetas, offsets, n_t, n):
    h = 2.0 / n
    dt = 2.0 / (n_t - 1)
    out = np.zeros((n, n))
    for k in range(thetas.shape[0]):
        c = np.cos(thetas[k])
        s = np.sin(thetas[k])
        for ip in range(offsets.shape[0]):
            g = values[ip, k]
            if g == 0.0:
                continue
            p = offsets[ip]
            for it in range(n_t):
                t = -1.0 + it * dt
                wt = dt if 0 < it < n_t - 1 else 0.5 * dt
                u1 = (p * c - t * s + 1.0) / h - 0.5
                u2 = (p * s + t * c + 1.0) / h - 0.5
                j0 = int(np.floor(u1))
                i0 = int(np.floor(u2))
                if j0 < -1 or j0 >= n or i0 < -1 or i0 >= n:
                    continue
                fx = u1 - j0
                fy = u2 - i0
                gw = wt * g
                if i0 >= 0:
                    if j0 >= 0:
                        out[i0, j0] += (1.0 - fy) * (1.0 - fx) * gw
                    if j0 + 1 < n:
                        out[i0, j0 + 1] += (1.0 - fy) * fx * gw
                if i0 + 1 < n:
                    if j0 >= 0:
                        out[i0 + 1, j0] += fy * (1.0 - fx) * gw
                    if j0 + 1 < n:
                        out[i0 + 1, j0 + 1] += fy * fx * gw
    return out


def _n_t(n: int) -> int:
    return RAY_OVERSAMPLE * n + 1


def radon_forward(img, angles: AngleSet, n_p: int) -> Sinogram:
    """Limited-angle Radon transform ``R_delta f`` sampled at ``n_p`` offsets.

    Each line ``{p v + t v_perp : |t| <= 1}`` is sampled with step
    ``h / RAY_OVERSAMPLE`` (``h`` the pixel width), the image is bilinearly
    interpolated (zero outside the raster) and the samples are summed with
    trapezoid weights.
    """
    if n_p < 2:
        raise ValueError(f"n_p must be >= 2, got {n_p}")
    if angles.n_theta < 1:
        raise ValueError("empty angle set")
    arr = np.ascontiguousarray(grid.check_image(img))
    offsets = np.linspace(-1.0, 1.0, n_p)
    out = _project(arr, angles.thetas, offsets, _n_t(arr.shape[0]))
    return Sinogram(out, angles)


def radon_transpose(values: np.ndarray, angles: AngleSet, n: int) -> np.ndarray:
    """Plain matrix transpose of the forward map (no quadrature weights)."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    offsets = np.linspace(-1.0, 1.0, values.shape[0])
    return _transpose(values, angles.thetas, offsets, _n_t(n), n)


def radon_adjoint(sino: Sinogram, n: int) -> np.ndarray:
    """Exact adjoint of :func:`radon_forward`.

    Adjoint for the inner products ``sum g1 g2 dp dtheta`` (trapezoid weights
    in both variables) on sinograms and ``sum f1 f2 dx`` on images, so
    ``sino.inner(radon_forward(f)) == grid.inner(f, radon_adjoint(sino))`` up
    to rounding.
    """
    h = 2.0 / n
    weighted = sino.values * sino.quadrature
    return radon_transpose(weighted, sino.angles, n) / (h * h)


@numba.njit(cache=True)
def _pixel_backproject(values, thetas, weights, offsets, n):
    h = 2.0 / n
    dp = offsets[1] - offsets[0]
    n_p = offsets.shape[0]
    out = np.zeros((n, n))
    for k in range(thetas.shape[0]):
        c = np.cos(thetas[k])
        s = np.sin(thetas[k])
        w = weights[k]
        for i in range(n):
            x2 = -1.0 + (i + 0.5) * h
            for j in range(n):
                x1 = -1.0 + (j + 0.5) * h
                u = (x1 * c + x2 * s - offsets[0]) / dp
                m = int(np.floor(u))
                if m < 0 or m >= n_p - 1:
                    # outside the detector: only the exact endpoint survives
                    if m == n_p - 1 and u == m:
                        out[i, j] += w * values[m, k]
                    continue
                f = u - m
                out[i, j] += w * ((1.0 - f) * values[m, k] + f * values[m + 1, k])
    return out


def backproject(sino: Sinogram, n: int) -> np.ndarray:
    """Pixel-driven limited-angle backprojection onto an ``n x n`` image.

    ``R*_delta g(x) = int_{-delta}^{delta} g(theta, x . v(theta)) dtheta`` with
    linear interpolation in ``p`` (zero beyond ``|p| = 1``) and the trapezoid
    angular weights. This is the operator FBP uses; the exact discrete adjoint
    of the forward map is :func:`radon_adjoint`.
    """
    vals = np.ascontiguousarray(sino.values)
    return _pixel_backproject(vals, sino.angles.thetas, sino.angles.weights,
                              sino.offsets, n)


def _ramp_columns(values: np.ndarray, dp: float, pad: bool) -> np.ndarray:
    n_p = values.shape[0]
    size = n_p
    if pad:
        size = 1 << int(np.ceil(np.log2(4 * n_p)))
    tau = 2 * np.pi * np.fft.fftfreq(size, d=dp)
    spec = np.fft.fft(values, n=size, axis=0)
    out = np.fft.ifft(spec * np.abs(tau)[:, None], axis=0).real
    return out[:n_p]


def riesz_filter(sino: Sinogram, pad: bool = False) -> Sinogram:
    """Apply the multiplier ``|tau|`` to every sinogram column.

    Without padding the columns are treated as periodic, which makes constants
    exact zeros and grid cosines exact eigenfunctions. ``pad=True`` zero-pads
    to at least four times the length before filtering, which suppresses the
    wrap-around of the slowly decaying ramp kernel.
    """
    return sino.with_values(_ramp_columns(sino.values, sino.dp, pad))


def _ramp_extended(values: np.ndarray, dp: float):
    """Ramp-filter columns and keep the filtered signal on ``|p| <= 3``.

    The data vanish for ``|p| > 1`` but ``Lambda g`` does not (the filter is
    nonlocal); pixels in the corners of the square see offsets up to
    ``sqrt(2)``, so the tails are kept instead of being cut at the detector.
    """
    n_p = values.shape[0]
    ext = n_p - 1
    size = 1 << int(np.ceil(np.log2(4 * n_p)))
    tau = 2 * np.pi * np.fft.fftfreq(size, d=dp)
    col = np.fft.ifft(np.fft.fft(values, n=size, axis=0) * np.abs(tau)[:, None], axis=0).real
    out = np.concatenate([col[size - ext:], col[:n_p + ext]], axis=0)
    offsets = -1.0 + dp * np.arange(-ext, n_p + ext)
    return np.ascontiguousarray(out), offsets


def fbp(sino: Sinogram, n: int) -> np.ndarray:
    """Limited-angle filtered backprojection ``L_delta = (1/4pi) R* Lambda R``.

    This is not an inverse for ``delta < pi/2``: it reproduces the part of the
    image whose spectrum lies in the symmetrized visible cone. The filtered
    columns are zero padded (no wrap-around) and backprojected including
    their tails beyond the detector.
    """
    filtered, offsets = _ramp_extended(sino.values, sino.dp)
    bp = _pixel_backproject(filtered, sino.angles.thetas, sino.angles.weights, offsets, n)
    return FBP_GAIN / (4 * np.pi) * bp


@dataclass(frozen=True)
class SliceReport:
    errors: np.ndarray
    band: float

    @property
    def max_error(self) -> float:
        return float(np.max(self.errors))

    @property
    def mean_error(self) -> float:
        return float(np.mean(self.errors))


def _bilinear_spectrum(spec_shifted: np.ndarray, spacing: float, xi1, xi2):
    N = spec_shifted.shape[0]
    u1 = xi1 / spacing + N // 2
    u2 = xi2 / spacing + N // 2
    j0 = np.clip(np.floor(u1).astype(np.int64), 0, N - 2)
    i0 = np.clip(np.floor(u2).astype(np.int64), 0, N - 2)
    fx = u1 - j0
    fy = u2 - i0
    return ((1 - fy) * (1 - fx) * spec_shifted[i0, j0]
            + (1 - fy) * fx * spec_shifted[i0, j0 + 1]
            + fy * (1 - fx) * spec_shifted[i0 + 1, j0]
            + fy * fx * spec_shifted[i0 + 1, j0 + 1])


def fourier_slice(sino: Sinogram, img, band_fraction: float = 0.5, pad: int = 4) -> SliceReport:
    """Compare per-column 1D spectra with the image spectrum along rays.

    Each column's continuum transform in ``p`` is compared against
    ``F f(tau v(theta))`` obtained by bilinear interpolation of the image
    spectrum, computed on a ``pad``-times finer frequency lattice (zero padded
    field of view). Only ``|tau| <= band_fraction * n_p * pi / 2`` is used.
    """
    arr = grid.check_image(img)
    n = arr.shape[0]
    if sino.values.shape[0] < 2:
        raise ValueError("sinogram too small")
    big = grid.zero_extend(arr, pad)
    N = big.shape[0]
    side = 2.0 * N / n
    spec = np.fft.fftshift(grid.fft2(big, side=side))
    spacing = 2 * np.pi / side

    n_p, dp = sino.n_p, sino.dp
    tau = 2 * np.pi * np.fft.fftfreq(n_p, d=dp)
    cols = dp * np.fft.fft(sino.values, axis=0) * np.exp(1j * tau)[:, None]
    band = band_fraction * n_p * np.pi / 2
    keep = np.abs(tau) <= band
    tau = tau[keep]
    cols = cols[keep]

    errors = np.empty(sino.angles.n_theta)
    for k, theta in enumerate(sino.angles.thetas):
        ref = _bilinear_spectrum(spec, spacing, tau * np.cos(theta), tau * np.sin(theta))
        denom = np.linalg.norm(ref)
        diff = np.linalg.norm(cols[:, k] - ref)
        if denom == 0:
            errors[k] = 0.0 if diff == 0 else np.inf
        else:
            errors[k] = diff / denom
    return SliceReport(errors, band)
