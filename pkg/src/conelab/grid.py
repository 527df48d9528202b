"""Discrete image / frequency grid on the square field of view [-1, 1]^2.

Conventions used by every module in the package:

* An image is an ``(n, n)`` float64 array. ``img[i, j]`` is the value at the
  pixel centre ``(x1, x2) = (c[j], c[i])`` with ``c = -1 + (arange(n) + 0.5) * h``
  and pixel width ``h = side / n`` (``side = 2`` unless rescaled).
* Spectra are ``(n, n)`` complex arrays in numpy FFT order (no shift). Axis 0
  carries the lattice frequency ``k2``, axis 1 carries ``k1``; both take values
  in ``{-n/2, ..., n/2 - 1}``.
* Continuum frequency in radians per unit length: ``xi = 2 pi k / side``
  (``xi = pi k`` on the default field of view).
* ``fft2`` approximates ``F f(xi) = int f(x) exp(-i xi . x) dx``. Norms in the
  frequency domain use the measure ``dxi / (2 pi)^2`` so Plancherel holds
  without extra constants.
"""

from __future__ import annotations

import numpy as np

FOV_SIDE = 2.0
HERMITIAN_RTOL = 1e-10
IMAG_RTOL = 1e-10
# Lattice points sitting exactly on a cone boundary (e.g. k = (1, 1) at pi/4)
# must not flip on rounding noise in arctan2.
ANGLE_ATOL = 1e-12
# zero-extension factor of the field of view used by sobolev_norm
SOBOLEV_PAD = 4


def check_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"image must be square, got shape {arr.shape}")
    if arr.shape[0] < 4:
        raise ValueError(f"image side must be >= 4, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


def pixel_centers(n: int, side: float = FOV_SIDE) -> np.ndarray:
    h = side / n
    return -side / 2 + (np.arange(n) + 0.5) * h


def grid(n: int, side: float = FOV_SIDE):
    """Return ``(X1, X2)`` coordinate arrays matching the image layout."""
    c = pixel_centers(n, side)
    return np.meshgrid(c, c, indexing="xy")


def lattice(n: int):
    """Integer lattice frequencies ``(K1, K2)`` in FFT order."""
    k = np.fft.fftfreq(n, d=1.0 / n)
    return np.meshgrid(k, k, indexing="xy")


def frequencies(n: int, side: float = FOV_SIDE):
    """Continuum frequencies ``(XI1, XI2)`` in radians per unit length."""
    K1, K2 = lattice(n)
    scale = 2 * np.pi / side
    return scale * K1, scale * K2


def _phase(n: int) -> np.ndarray:
    # exp(-i xi x_0) for the first pixel centre, per axis; independent of side
    k = np.fft.fftfreq(n, d=1.0 / n)
    return np.exp(1j * np.pi * k * (1.0 - 1.0 / n))


def fft2(img, side: float = FOV_SIDE) -> np.ndarray:
    """Continuum-calibrated 2D Fourier transform of an image.

    The DFT is scaled by the pixel area and phase-shifted so that the values
    approximate ``int f(x) exp(-i xi . x) dx`` at ``xi = 2 pi k / side`` for a
    field of view centred at the origin.
    """
    arr = check_image(img)
    n = arr.shape[0]
    ph = _phase(n)
    return np.fft.fft2(arr) * (side / n) ** 2 * ph[:, None] * ph[None, :]


def _raw_dft(spec: np.ndarray, side: float) -> np.ndarray:
    n = spec.shape[0]
    ph = _phase(n)
    return spec / (ph[:, None] * ph[None, :]) / (side / n) ** 2


def is_hermitian(spec, rtol: float = HERMITIAN_RTOL, side: float = FOV_SIDE) -> bool:
    """Hermitian symmetry of a calibrated spectrum.

    Checked on the raw DFT coefficients, i.e. with the Nyquist lines taken
    modulo ``n``; away from them it is ``spec(-k) == conj(spec(k))``.
    """
    raw = _raw_dft(np.asarray(spec, dtype=np.complex128), side)
    flipped = np.roll(raw[::-1, ::-1], 1, axis=(0, 1))
    scale = max(np.max(np.abs(raw)), np.finfo(float).tiny)
    return bool(np.max(np.abs(raw - np.conj(flipped))) <= rtol * scale)


def ifft2(spec, side: float = FOV_SIDE) -> np.ndarray:
    """Inverse of :func:`fft2`; rejects spectra that are not Hermitian."""
    spec = np.asarray(spec, dtype=np.complex128)
    if spec.ndim != 2 or spec.shape[0] != spec.shape[1]:
        raise ValueError(f"spectrum must be square, got shape {spec.shape}")
    if not is_hermitian(spec, side=side):
        raise ValueError("spectrum is not Hermitian; inverse would not be real")
    out = np.fft.ifft2(_raw_dft(spec, side))
    return out.real.copy()


def cone_weights(K1, K2, beta: float) -> np.ndarray:
    """0/1 weights of the symmetrized cone of half-angle ``beta``.

    The direction of ``(K1, K2)`` is folded into ``[0, pi/2]`` (so ``k`` and
    ``-k`` share a weight) and compared with ``beta``. The origin is included.
    """
    if not 0 < beta <= np.pi / 2:
        raise ValueError(f"beta must lie in (0, pi/2], got {beta!r}")
    if beta == np.pi / 2:
        return np.ones(np.shape(K1))
    ang = np.arctan2(np.abs(K2), np.abs(K1))
    w = ang <= beta + ANGLE_ATOL
    w |= (K1 == 0) & (K2 == 0)
    return w.astype(np.float64)


def cone_mask(n: int, beta: float) -> np.ndarray:
    """Lattice mask realising the cone multiplier on an ``n x n`` spectrum."""
    K1, K2 = lattice(n)
    return cone_weights(K1, K2, beta)


def fold_angle(K1, K2) -> np.ndarray:
    """Direction angle of lattice vectors folded into [0, pi/2]."""
    return np.arctan2(np.abs(K2), np.abs(K1))


def apply_multiplier(img, mask) -> np.ndarray:
    arr = check_image(img)
    mask = np.asarray(mask)
    if mask.shape != arr.shape:
        raise ValueError(f"mask shape {mask.shape} does not match image {arr.shape}")
    out = np.fft.ifft2(np.fft.fft2(arr) * mask)
    scale = max(np.max(np.abs(out.real)), np.finfo(float).tiny)
    if np.max(np.abs(out.imag)) > IMAG_RTOL * scale:
        raise ValueError("multiplier produced a complex image; mask is not symmetric")
    return out.real.copy()


def spectral_measure(side: float = FOV_SIDE) -> float:
    """Weight ``dxi / (2 pi)^2`` of one lattice cell."""
    return 1.0 / side**2


def zero_extend(img, pad: int) -> np.ndarray:
    """Centre an image in a ``pad``-times larger zero field of view."""
    arr = check_image(img)
    if pad < 1:
        raise ValueError("pad must be >= 1")
    if pad == 1:
        return arr
    n = arr.shape[0]
    N = pad * n
    big = np.zeros((N, N))
    o = (N - n) // 2
    big[o:o + n, o:o + n] = arr
    return big


def sobolev_norm(img, s: float, homogeneous: bool = False, side: float = FOV_SIDE,
                 beta: float | None = None, pad: int = SOBOLEV_PAD) -> float:
    """Spectral H^s norm (``homogeneous=False``) or seminorm.

    Inhomogeneous weight ``(1 + |xi|^2)^s``; homogeneous weight ``|xi|^(2s)``
    with the DC term dropped. The image is first zero-extended to a
    ``pad``-times larger field of view: the lattice sum then samples the
    spectrum of the compactly supported function on a finer frequency grid,
    which matters for negative ``s`` where the weight is large near the
    origin. ``beta`` restricts the sum to the symmetrized cone.
    """
    big = zero_extend(img, pad)
    spec = fft2(big, side * pad)
    N = spec.shape[0]
    if beta is not None:
        spec = spec * cone_mask(N, beta)
    XI1, XI2 = frequencies(N, side * pad)
    return _weighted_norm(spec, XI1**2 + XI2**2, s, homogeneous, side * pad)


def _weighted_norm(spec, r2, s, homogeneous, side) -> float:
    power = np.abs(spec) ** 2
    if homogeneous:
        w = np.zeros_like(r2)
        nz = r2 > 0
        w[nz] = r2[nz] ** s
    else:
        w = (1.0 + r2) ** s
    return float(np.sqrt(np.sum(w * power) * spectral_measure(side)))


def l2_norm(img, side: float = FOV_SIDE) -> float:
    arr = np.asarray(img, dtype=np.float64)
    h = side / arr.shape[0]
    return float(np.sqrt(np.sum(arr**2) * h * h))


def inner(f, g, side: float = FOV_SIDE) -> float:
    f = np.asarray(f, dtype=np.float64)
    h = side / f.shape[0]
    return float(np.sum(f * np.asarray(g)) * h * h)


def cone_filter_padded(img, beta: float, pad: int = 4) -> np.ndarray:
    """``chi_beta(D) f`` with the image zero-extended to a ``pad``-times
    larger field of view, so the cone is sampled on a finer frequency lattice
    and the periodic wrap of the sharp multiplier is pushed away."""
    n = check_image(img).shape[0]
    big = zero_extend(img, pad)
    out = apply_multiplier(big, cone_mask(big.shape[0], beta))
    o = (big.shape[0] - n) // 2
    return out[o:o + n, o:o + n].copy()


def boundary_shell(K1, K2, shell: float) -> np.ndarray:
    """Angular half-width of the excluded boundary shell per lattice point.

    At least ``shell`` radians and never narrower than one lattice spacing
    (``arcsin(1/|k|)``), so low frequencies are not classified by a boundary
    that passes between neighbouring lattice points.
    """
    r = np.hypot(K1, K2)
    with np.errstate(divide="ignore"):
        lattice_width = np.arcsin(np.minimum(1.0, 1.0 / np.where(r > 0, r, 1.0)))
    return np.maximum(shell, lattice_width)


def cone_regions(n: int, beta: float, shell: float):
    """Boolean ``(inside, outside)`` lattice sets with the boundary shell and
    DC removed from both."""
    K1, K2 = lattice(n)
    ang = fold_angle(K1, K2)
    width = boundary_shell(K1, K2, shell)
    dc = (K1 == 0) & (K2 == 0)
    inside = (ang < beta - width) & ~dc
    outside = (ang > beta + width) & ~dc
    return inside, outside


def outside_cone_fraction(img, beta: float, shell: float = np.deg2rad(2.0)) -> float:
    """Spectral energy strictly outside the cone (beyond the shell) over the
    total spectral energy."""
    arr = check_image(img)
    power = np.abs(np.fft.fft2(arr)) ** 2
    total = float(power.sum())
    if total == 0:
        return 0.0
    _, outside = cone_regions(arr.shape[0], beta, shell)
    return float(power[outside].sum()) / total


def cone_agreement(img, reference, beta: float, shell: float = np.deg2rad(2.0)) -> float:
    """``1 - ||F(img - ref)|| / ||F ref||`` over the cone interior (shell and
    DC excluded)."""
    a = np.fft.fft2(check_image(img))
    b = np.fft.fft2(check_image(reference))
    inside, _ = cone_regions(a.shape[0], beta, shell)
    den = np.linalg.norm(b[inside])
    if den == 0:
        raise ValueError("reference has no energy inside the cone")
    return 1.0 - float(np.linalg.norm((a - b)[inside]) / den)
