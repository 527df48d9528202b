"""Parametric phantoms with closed-form sinograms and Fourier transforms.

Scenes are lists of ellipses and axis-aligned squares living in the unit disk.
Each shape knows its indicator function (for rasterisation) and its exact
chord length along a line, so sinograms can be generated analytically and
never by the discrete forward operator (no inverse crime).

Random ellipse scenes use fixed sampling ranges, see ``ELLIPSE_*`` constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import grid
from .radon import AngleSet, Sinogram

# Sampling ranges of random_ellipse_scene.
BACKGROUND_SEMI_AXIS = (0.8, 0.92)
BACKGROUND_AMPLITUDE = (0.4, 0.8)
ELLIPSE_SEMI_AXIS = (0.05, 0.35)
ELLIPSE_AMPLITUDE = (0.05, 0.4)
# every ellipse stays inside the disk of this radius
CONTAINMENT_RADIUS = 0.95

SUPERSAMPLE = 4
ANALYTIC_OVERSAMPLE = 4

_J1_SERIES_LIMIT = 12.0


def _j1_over_x_series(x: np.ndarray) -> np.ndarray:
    # J1(x)/x = sum_m (-1)^m (x/2)^(2m) / (2 m! (m+1)!)
    q = -(x * x) / 4.0
    term = np.full_like(x, 0.5)
    total = term.copy()
    for m in range(1, 60):
        term = term * q / (m * (m + 1))
        total += term
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)):
            break
    return total


def _j1_asymptotic(x: np.ndarray) -> np.ndarray:
    # Hankel expansion, mu = 4 nu^2 = 4, summed until terms stop shrinking
    mu = 4.0
    z = 8.0 * x
    P = np.ones_like(x)
    Q = (mu - 1.0) / z
    term_p = np.ones_like(x)
    term_q = Q.copy()
    prev = np.abs(term_q)
    for k in range(1, 40):
        a, b = 4 * k - 3, 4 * k - 1
        term_p = -term_p * (mu - a * a) * (mu - b * b) / ((2 * k - 1) * (2 * k) * z * z)
        c, d = 4 * k - 1, 4 * k + 1
        term_q = -term_q * (mu - c * c) * (mu - d * d) / ((2 * k) * (2 * k + 1) * z * z)
        size = np.abs(term_p) + np.abs(term_q)
        grow = size > prev
        if np.all(grow):
            break
        P = np.where(grow, P, P + term_p)
        Q = np.where(grow, Q, Q + term_q)
        # freeze entries whose series started to diverge
        term_p = np.where(grow, 0.0, term_p)
        term_q = np.where(grow, 0.0, term_q)
        prev = np.where(grow, 0.0, size)
        if np.all(size < 1e-17):
            break
    chi = x - 0.75 * np.pi
    return np.sqrt(2.0 / (np.pi * x)) * (P * np.cos(chi) - Q * np.sin(chi))


def bessel_j1(x) -> np.ndarray:
    """Bessel function J1 (power series below 12, Hankel asymptotics above)."""
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    out = np.empty_like(ax)
    small = ax < _J1_SERIES_LIMIT
    out[small] = ax[small] * _j1_over_x_series(ax[small])
    out[~small] = _j1_asymptotic(ax[~small])
    return np.sign(x) * out if out.ndim else float(np.sign(x) * out)


def disk_fourier_analytic(a: float, xi) -> np.ndarray:
    """Fourier transform of the indicator of the disk of radius ``a``.

    ``xi`` is either a radial frequency array or an array of 2-vectors (last
    axis of length 2). Returns ``a^2 * F1(a |xi|)`` with ``F1(r) = 2 pi J1(r)/r``.
    """
    if not 0 < a <= 1:
        raise ValueError(f"radius must lie in (0, 1], got {a!r}")
    xi = np.asarray(xi, dtype=np.float64)
    r = np.linalg.norm(xi, axis=-1) if xi.ndim and xi.shape[-1] == 2 else np.abs(xi)
    return a * a * _unit_disk_fourier(a * r)


def _unit_disk_fourier(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    out = np.empty_like(r)
    small = r < _J1_SERIES_LIMIT
    out[small] = 2 * np.pi * _j1_over_x_series(r[small])
    big = ~small
    out[big] = 2 * np.pi * _j1_asymptotic(r[big]) / r[big]
    return out


@dataclass(frozen=True)
class Ellipse:
    center: tuple
    semi_axes: tuple
    rotation: float = 0.0
    amplitude: float = 1.0

    def __post_init__(self):
        if min(self.semi_axes) <= 0:
            raise ValueError("semi-axes must be positive")

    @property
    def extent(self) -> float:
        return math.hypot(*self.center) + max(self.semi_axes)

    def indicator(self, x1, x2):
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        d1 = x1 - self.center[0]
        d2 = x2 - self.center[1]
        u = (c * d1 + s * d2) / self.semi_axes[0]
        v = (-s * d1 + c * d2) / self.semi_axes[1]
        return u * u + v * v < 1.0

    def bbox(self):
        r = max(self.semi_axes)
        return (self.center[0] - r, self.center[0] + r, self.center[1] - r, self.center[1] + r)

    def chord(self, p, theta):
        """Length of ``{x : x . v(theta) = p}`` inside the ellipse."""
        a1, a2 = self.semi_axes
        cv, sv = np.cos(theta), np.sin(theta)
        # direction v in the ellipse frame
        vu = cv * math.cos(self.rotation) + sv * math.sin(self.rotation)
        vv = -cv * math.sin(self.rotation) + sv * math.cos(self.rotation)
        r2 = (a1 * vu) ** 2 + (a2 * vv) ** 2
        q = p - (self.center[0] * cv + self.center[1] * sv)
        return 2 * a1 * a2 * np.sqrt(np.clip(r2 - q * q, 0.0, None)) / r2


@dataclass(frozen=True)
class AxisSquare:
    center: tuple
    half_width: float
    amplitude: float = 1.0

    def __post_init__(self):
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")

    @property
    def extent(self) -> float:
        w = self.half_width
        return math.hypot(abs(self.center[0]) + w, abs(self.center[1]) + w)

    def indicator(self, x1, x2):
        w = self.half_width
        return (np.abs(x1 - self.center[0]) < w) & (np.abs(x2 - self.center[1]) < w)

    def bbox(self):
        w = self.half_width
        return (self.center[0] - w, self.center[0] + w, self.center[1] - w, self.center[1] + w)

    def chord(self, p, theta):
        # slab intersection along x = p v + t v_perp
        c, s = np.cos(theta), np.sin(theta)
        w = self.half_width
        p = np.asarray(p, dtype=np.float64)
        lo = np.full(np.broadcast(p, c).shape, -np.inf)
        hi = np.full_like(lo, np.inf)
        for base, slope, ctr in ((p * c, -s, self.center[0]), (p * s, c, self.center[1])):
            base = np.broadcast_to(base, lo.shape)
            slope = np.broadcast_to(slope, lo.shape)
            flat = np.abs(slope) < 1e-15
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (ctr - w - base) / slope
                t2 = (ctr + w - base) / slope
            tmin = np.where(flat, np.where(np.abs(base - ctr) < w, -np.inf, np.inf), np.minimum(t1, t2))
            tmax = np.where(flat, np.where(np.abs(base - ctr) < w, np.inf, -np.inf), np.maximum(t1, t2))
            lo = np.maximum(lo, tmin)
            hi = np.minimum(hi, tmax)
        return np.clip(hi - lo, 0.0, None)


@dataclass(frozen=True)
class Scene:
    shapes: tuple
    kind: str = "ellipses"

    def __post_init__(self):
        if not self.shapes:
            raise ValueError("scene must contain at least one shape")
        object.__setattr__(self, "shapes", tuple(self.shapes))
        for shp in self.shapes:
            if shp.extent >= 1.0:
                raise ValueError(f"shape {shp} is not contained in the unit disk")

    def to_dict(self) -> dict:
        out = []
        for shp in self.shapes:
            if isinstance(shp, Ellipse):
                out.append({"type": "ellipse", "center": list(shp.center),
                            "semi_axes": list(shp.semi_axes), "rotation": shp.rotation,
                            "amplitude": shp.amplitude})
            else:
                out.append({"type": "square", "center": list(shp.center),
                            "half_width": shp.half_width, "amplitude": shp.amplitude})
        return {"kind": self.kind, "shapes": out}

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        shapes = []
        for s in d["shapes"]:
            if s["type"] == "ellipse":
                shapes.append(Ellipse(tuple(s["center"]), tuple(s["semi_axes"]),
                                      s["rotation"], s["amplitude"]))
            elif s["type"] == "square":
                shapes.append(AxisSquare(tuple(s["center"]), s["half_width"], s["amplitude"]))
            else:
                raise ValueError(f"unknown shape type {s['type']!r}")
        return cls(tuple(shapes), d.get("kind", "ellipses"))


def random_ellipse_scene(seed, max_ellipses: int = 5) -> Scene:
    """Random scene of 1..max_ellipses ellipses inside the unit disk.

    The first ellipse is a large background body (semi-axes uniform on
    ``BACKGROUND_SEMI_AXIS``, amplitude on ``BACKGROUND_AMPLITUDE``); the
    remaining ``count - 1`` are interior details (semi-axes on
    ``ELLIPSE_SEMI_AXIS``, amplitude on ``ELLIPSE_AMPLITUDE``). Count is
    uniform on ``[1, max_ellipses]``, rotations uniform on ``[0, pi)``,
    centres uniform in the disk keeping each ellipse inside radius
    ``CONTAINMENT_RADIUS``. Amplitudes are scaled by ``1 / max(1, sum)`` so
    overlaps never exceed 1.
    """
    if max_ellipses < 1:
        raise ValueError("max_ellipses must be >= 1")
    rng = np.random.default_rng(seed)
    count = int(rng.integers(1, max_ellipses + 1))
    amps = np.concatenate([rng.uniform(*BACKGROUND_AMPLITUDE, size=1),
                           rng.uniform(*ELLIPSE_AMPLITUDE, size=count - 1)])
    amps = amps / max(1.0, float(amps.sum()))
    shapes = []
    for k in range(count):
        axes = rng.uniform(*(BACKGROUND_SEMI_AXIS if k == 0 else ELLIPSE_SEMI_AXIS), size=2)
        rot = rng.uniform(0.0, np.pi)
        room = CONTAINMENT_RADIUS - float(axes.max())
        rad = room * math.sqrt(rng.uniform())
        phi = rng.uniform(0.0, 2 * np.pi)
        center = (rad * math.cos(phi), rad * math.sin(phi))
        shapes.append(Ellipse(center, (float(axes[0]), float(axes[1])), float(rot), float(amps[k])))
    return Scene(tuple(shapes), "ellipses")


def disk_scene(a: float) -> Scene:
    if not 0 < a < 1:
        raise ValueError(f"disk radius must lie in (0, 1), got {a!r}")
    return Scene((Ellipse((0.0, 0.0), (a, a)),), "disk")


def squares_scene(half_width: float = 0.2, gap: float = 0.15) -> Scene:
    """Two equal squares side by side on the x1 axis."""
    off = half_width + gap / 2
    return Scene((AxisSquare((-off, 0.0), half_width), AxisSquare((off, 0.0), half_width)),
                 "squares")


def render(scene: Scene, n: int, supersample: int = SUPERSAMPLE) -> np.ndarray:
    """Rasterise a scene; each pixel averages ``supersample**2`` point samples."""
    if supersample < 1:
        raise ValueError("supersample must be >= 1")
    m = n * supersample
    c = grid.pixel_centers(m)
    fine = np.zeros((m, m))
    step = 2.0 / m
    for shp in scene.shapes:
        if shp.amplitude == 0:
            continue
        x0, x1, y0, y1 = shp.bbox()
        j0 = max(int((x0 + 1) / step) - 1, 0)
        j1 = min(int((x1 + 1) / step) + 2, m)
        i0 = max(int((y0 + 1) / step) - 1, 0)
        i1 = min(int((y1 + 1) / step) + 2, m)
        X1, X2 = np.meshgrid(c[j0:j1], c[i0:i1], indexing="xy")
        fine[i0:i1, j0:j1] += shp.amplitude * shp.indicator(X1, X2)
    return fine.reshape(n, supersample, n, supersample).mean(axis=(1, 3))


def _line_integrals(scene: Scene, p: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    out = np.zeros(np.broadcast(p, thetas).shape)
    for shp in scene.shapes:
        out += shp.amplitude * shp.chord(p, thetas)
    return out


def analytic_sinogram(scene: Scene, angles: AngleSet, n_p: int, oversample: int = 1) -> Sinogram:
    """Exact line integrals of a scene.

    With ``oversample > 1`` every detector bin is the block mean of
    ``oversample`` exact line integrals at sub-offsets centred on the bin,
    i.e. a finer analytic sinogram downsampled onto the ``n_p`` grid.
    """
    if n_p < 2:
        raise ValueError("n_p must be >= 2")
    p = np.linspace(-1.0, 1.0, n_p)
    th = angles.thetas[None, :]
    if oversample == 1:
        return Sinogram(_line_integrals(scene, p[:, None], th), angles)
    dp = 2.0 / (n_p - 1)
    sub = p[:, None] + dp * ((np.arange(oversample) + 0.5) / oversample - 0.5)[None, :]
    fine = _line_integrals(scene, sub.reshape(-1, 1), th)
    return Sinogram(downsample(fine, oversample, axes=(0,)), angles)


def measure(scene: Scene, angles: AngleSet, n_p: int, noise_rel: float = 0.0,
            seed=None, oversample: int = ANALYTIC_OVERSAMPLE) -> Sinogram:
    """Measurement protocol: analytic sinogram at finer offsets, block-mean
    downsampled, optional Gaussian noise."""
    sino = analytic_sinogram(scene, angles, n_p, oversample)
    if noise_rel > 0:
        sino = add_noise(sino, noise_rel, seed)
    return sino


def add_noise(sino: Sinogram, sigma_rel: float, seed) -> Sinogram:
    """Add i.i.d. Gaussian noise with std ``sigma_rel * max|sino|``."""
    if sigma_rel < 0:
        raise ValueError("sigma_rel must be >= 0")
    if sigma_rel == 0:
        return sino.with_values(sino.values.copy())
    rng = np.random.default_rng(seed)
    sigma = sigma_rel * float(np.max(np.abs(sino.values)))
    return sino.with_values(sino.values + rng.normal(0.0, sigma, size=sino.values.shape))


def downsample(x, factor: int, axes=None):
    """Block mean by ``factor``.

    Images are pooled along both axes, sinograms along the offset axis only.
    Plain arrays are pooled along ``axes`` (default: all).
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if isinstance(x, Sinogram):
        return x.with_values(downsample(x.values, factor, axes=(0,)))
    arr = np.asarray(x, dtype=np.float64)
    if axes is None:
        axes = tuple(range(arr.ndim))
    shape = []
    for ax, size in enumerate(arr.shape):
        if ax in axes:
            if size % factor:
                raise ValueError(f"axis {ax} of length {size} not divisible by {factor}")
            shape += [size // factor, factor]
        else:
            shape.append(size)
    pooled = arr.reshape(shape)
    red = tuple(i for i, ax in enumerate(_expanded_axes(arr.ndim, axes)) if ax)
    return pooled.mean(axis=red)


def _expanded_axes(ndim, axes):
    flags = []
    for ax in range(ndim):
        flags.append(False)
        if ax in axes:
            flags.append(True)
    return flags


def derive_seed(seed: int, index: int) -> int:
    """Per-image seed: first 63 bits of ``SeedSequence([seed, index])``."""
    state = np.random.SeedSequence([int(seed), int(index)]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


@dataclass
class Dataset:
    images: list
    scenes: list
    seed: int
    params: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.images)

    @property
    def n(self) -> int:
        return self.images[0].shape[0]


def generate_dataset(seed: int, count: int, n: int, max_ellipses: int = 5) -> Dataset:
    if count < 1:
        raise ValueError("count must be >= 1")
    scenes = [random_ellipse_scene(derive_seed(seed, i), max_ellipses) for i in range(count)]
    images = [np.clip(render(s, n, SUPERSAMPLE), 0.0, 1.0) for s in scenes]
    params = {"max_ellipses": max_ellipses, "supersample": SUPERSAMPLE,
              "background_semi_axis": list(BACKGROUND_SEMI_AXIS),
              "background_amplitude": list(BACKGROUND_AMPLITUDE),
              "semi_axis": list(ELLIPSE_SEMI_AXIS), "amplitude": list(ELLIPSE_AMPLITUDE)}
    return Dataset(images, scenes, seed, params)
