"""Stability diagnostics for limited-angle data.

Quantities computed here:

* ``N_beta = max_f ||f||_{L2} / ||chi_beta(D) f||_{H^{-1/2}}`` over a dataset,
  with images rescaled to the unit square (``UNIT_SQUARE_SIDE``).
* ``g(eps) = max_f ||chi_{delta+eps}(D) f||_{H^{-1/2}} / ||R_delta f||``.
* Checks of the two stability inequalities
  ``||chi_delta(D) f|| <= ||R_delta f||`` and
  ``||chi_{delta+eps}(D) f|| <= 2 ||R_delta f||`` for ``f`` in ``D_{N,eps}``.
* The admissible ``eps`` for a prior constant ``N`` and the disk-radius sweep.

Sinogram norms always use the ``dp dtheta`` quadrature of
:class:`conelab.radon.Sinogram`, i.e. arc length on the visible directions.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import grid
from .phantoms import Dataset, disk_fourier_analytic, disk_scene, measure, render
from .radon import AngleSet, Sinogram, radon_forward

# Side length of the field of view used for N_beta (images are mapped onto
# the unit square before the Sobolev norm is taken).
UNIT_SQUARE_SIDE = 1.0
# N_beta is a lattice sum over the image's own frequency grid (no zero
# extension); the stability checks use the finer grid of grid.SOBOLEV_PAD.
PRIOR_PAD = 1
DEGENERATE = 1e-14
STABILITY_TOLERANCE = 0.05

# Radial quadrature for the analytic disk norms: Gauss-Legendre panels of
# unit width up to RADIAL_CUTOFF plus the closed-form tail of the asymptotics.
RADIAL_CUTOFF = 2.0e4
_GL_NODES = 16


class DegenerateDenominator(ValueError):
    """The cone (or the measurement) does not see the image at all."""


@dataclass(frozen=True)
class StabilityReport:
    lhs: float
    rhs: float
    constant: float
    tolerance: float = STABILITY_TOLERANCE

    @property
    def slack(self) -> float:
        return self.rhs * self.constant - self.lhs

    @property
    def satisfied(self) -> bool:
        return self.slack >= -self.tolerance * self.rhs

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "constant": self.constant,
                "satisfied": self.satisfied, "slack": self.slack,
                "tolerance": self.tolerance}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class Curve:
    abscissa: tuple
    values: tuple
    label: str = ""
    units: str = "deg"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.asarray(self.abscissa, dtype=np.float64)
        if len(x) != len(self.values):
            raise ValueError("abscissa and values differ in length")
        if np.any(np.diff(x) <= 0):
            raise ValueError("abscissas must be strictly increasing")
        object.__setattr__(self, "abscissa", tuple(float(a) for a in x))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def __len__(self):
        return len(self.values)


def cone_sobolev(img, beta: float, homogeneous: bool, s: float = -0.5,
                 side: float = grid.FOV_SIDE, pad: int = grid.SOBOLEV_PAD) -> float:
    """``||chi_beta(D) f||_{H^s}`` without forming the filtered image."""
    return grid.sobolev_norm(img, s, homogeneous, side, beta=beta, pad=pad)


def _images(ds) -> list:
    images = ds.images if isinstance(ds, Dataset) else list(ds)
    if not images:
        raise ValueError("dataset is empty")
    return images


def prior_ratio(img, beta: float, homogeneous: bool = False,
                side: float = UNIT_SQUARE_SIDE) -> float:
    """``||f||_{L2} / ||chi_beta(D) f||_{H^{-1/2}}`` for a single image."""
    den = cone_sobolev(img, beta, homogeneous, side=side, pad=PRIOR_PAD)
    if den < DEGENERATE:
        raise DegenerateDenominator(
            f"cone of half-angle {math.degrees(beta):.4g} deg does not see the image")
    return grid.l2_norm(img, side) / den


def n_beta(ds, beta: float, homogeneous: bool = False,
           side: float = UNIT_SQUARE_SIDE) -> float:
    """Smallest ``N`` with every dataset image in the prior class at ``beta``."""
    return max(prior_ratio(f, beta, homogeneous, side) for f in _images(ds))


def n_beta_curve(ds, betas_deg, homogeneous: bool = False) -> Curve:
    vals = [n_beta(ds, math.radians(b), homogeneous) for b in betas_deg]
    return Curve(tuple(betas_deg), tuple(vals), "N_beta",
                 meta={"norm": _norm_name(homogeneous)})


def _norm_name(homogeneous: bool) -> str:
    return "homogeneous" if homogeneous else "inhomogeneous"


def measurement(ds: Dataset, index: int, delta: float, n_theta: int | None = None,
                n_p: int | None = None) -> Sinogram:
    """``R_delta f`` for a dataset member.

    Uses the analytic scene when the dataset carries one (anti-inverse-crime
    protocol) and the discrete forward map on the stored raster otherwise.
    """
    img = ds.images[index]
    n = img.shape[0]
    if n_theta is None:
        n_theta = default_n_theta(delta)
    if n_p is None:
        n_p = 2 * n + 1
    angles = AngleSet(delta, n_theta)
    if ds.scenes:
        return measure(ds.scenes[index], angles, n_p)
    return radon_forward(img, angles, n_p)


def default_n_theta(delta: float) -> int:
    """Two views per degree of the full aperture 2 delta, endpoints included."""
    return int(round(4 * math.degrees(delta))) + 1


def g_eps(ds: Dataset, delta: float, eps: float, homogeneous: bool = True,
          sinos: list | None = None) -> float:
    """``max_f ||chi_{delta+eps}(D) f||_{H^{-1/2}} / ||R_delta f||``.

    ``sinos`` may hold precomputed measurements (one per image) so that a
    whole curve in ``eps`` shares its denominators.
    """
    if delta + eps > np.pi / 2 + 1e-12:
        raise ValueError("delta + eps must not exceed pi/2")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    images = _images(ds)
    if sinos is None:
        sinos = [measurement(ds, i, delta) for i in range(len(images))]
    best = 0.0
    for img, sino in zip(images, sinos):
        den = sino.norm()
        if den < DEGENERATE:
            raise DegenerateDenominator("measurement vanishes")
        best = max(best, cone_sobolev(img, min(delta + eps, np.pi / 2), homogeneous) / den)
    return best


def g_eps_curve(ds: Dataset, delta: float, eps_deg, homogeneous: bool = True) -> Curve:
    sinos = [measurement(ds, i, delta) for i in range(len(ds))]
    vals = [g_eps(ds, delta, math.radians(e), homogeneous, sinos) for e in eps_deg]
    return Curve(tuple(eps_deg), tuple(vals), "g_eps",
                 meta={"norm": _norm_name(homogeneous), "delta_deg": math.degrees(delta)})


def membership(f, N: float, delta: float, eps: float, homogeneous: bool = False,
               side: float = UNIT_SQUARE_SIDE) -> bool:
    """Whether ``||f||_{L2} <= N ||chi_{delta+eps}(D) f||_{H^{-1/2}}``."""
    if N < 0:
        raise ValueError("N must be >= 0")
    beta = min(delta + eps, np.pi / 2)
    return grid.l2_norm(f, side) <= N * cone_sobolev(f, beta, homogeneous, side=side,
                                                     pad=PRIOR_PAD)


def check_stability(f, delta: float, eps: float = 0.0, factor: int = 1,
                    sino: Sinogram | None = None, homogeneous: bool = True,
                    tolerance: float = STABILITY_TOLERANCE) -> StabilityReport:
    """Evaluate one of the two stability inequalities for an image.

    ``factor=1``: ``||chi_delta(D) f|| <= ||R_delta f||``.
    ``factor=2``: ``||chi_{delta+eps}(D) f|| <= 2 ||R_delta f||``.
    The measurement is ``sino`` when given, else ``radon_forward`` of ``f``.
    """
    if factor not in (1, 2):
        raise ValueError("factor must be 1 or 2")
    arr = grid.check_image(f)
    beta = delta if factor == 1 else min(delta + eps, np.pi / 2)
    lhs = cone_sobolev(arr, beta, homogeneous)
    if sino is None:
        n = arr.shape[0]
        sino = radon_forward(arr, AngleSet(delta, default_n_theta(delta)), 2 * n + 1)
    return StabilityReport(lhs, sino.norm(), float(factor), tolerance)


def eps_threshold(N: float) -> float:
    """Largest ``eps`` (radians) with ``2 N (pi eps)^(1/4) <= 1/2``."""
    if not N > 0:
        raise ValueError(f"N must be positive, got {N!r}")
    return 1.0 / (math.pi * (4.0 * N) ** 4)


def fold(angle: float) -> float:
    """Fold a direction angle into ``[0, pi/2]`` (sign and antipode ignored)."""
    a = math.fmod(abs(angle), math.pi)
    return math.pi - a if a > math.pi / 2 else a


def classify_direction(angle_xi: float, delta: float) -> str:
    """``"visible"`` if a frequency direction lies in the measured cone."""
    return "visible" if fold(angle_xi) <= delta + grid.ANGLE_ATOL else "invisible"


def artifact_directions(delta: float) -> tuple:
    """Directions of the boundary views along which streaks can appear."""
    return (delta, -delta)


def _radial_integral(func, cutoff: float = RADIAL_CUTOFF) -> float:
    x, w = np.polynomial.legendre.leggauss(_GL_NODES)
    edges = np.arange(0.0, cutoff + 0.5, 1.0)
    lo, hi = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (hi - lo) * x[None, :] + 0.5 * (hi + lo)).ravel()
    weights = (0.5 * (hi - lo) * w[None, :]).ravel()
    return float(np.sum(weights * func(nodes)))


def disk_cone_norm_continuum(a: float, beta: float) -> float:
    """``||chi_beta(D) f_a||`` in the homogeneous ``H^{-1/2}`` norm on R^2.

    The integrand is radial, so the angular integral over the symmetrized
    cone is exactly ``4 beta``; the radial integral
    ``int_0^inf |F f_a(rho)|^2 drho`` is done by quadrature up to
    ``RADIAL_CUTOFF`` plus the tail ``2 pi a / R^2`` of the asymptotic
    ``|F f_a(rho)|^2 ~ 4 pi a / rho^3``.
    """
    R = RADIAL_CUTOFF
    radial = _radial_integral(lambda r: disk_fourier_analytic(a, r) ** 2, R)
    radial += 2 * np.pi * a / R**2
    return math.sqrt(4 * beta * radial / (2 * np.pi) ** 2)


def disk_l2_continuum(a: float) -> float:
    """``||f_a||_{L2}`` via Plancherel from the analytic transform."""
    R = RADIAL_CUTOFF
    radial = _radial_integral(lambda r: disk_fourier_analytic(a, r) ** 2 * r, R)
    radial += 4 * np.pi * a / R
    return math.sqrt(radial / (2 * np.pi))


def disk_sweep(radii, delta: float, eps: float, homogeneous: bool = True,
               method: str = "discrete", n: int = 128, N: float | None = None,
               supersample: int = 4) -> Curve:
    """Prior ratio ``||f_a|| / ||chi_{delta+eps}(D) f_a||`` against the radius.

    ``method="continuum"`` uses the analytic disk transform (homogeneous norm
    only); ``method="discrete"`` renders each disk on an ``n x n`` grid of
    the default field of view. With ``N`` given, the curve metadata carries
    the membership verdict ``ratio <= N`` for each radius.
    """
    beta = min(delta + eps, np.pi / 2)
    radii = [float(a) for a in radii]
    if any(not 0 < a < 1 for a in radii):
        raise ValueError("radii must lie in (0, 1)")
    vals = []
    for a in radii:
        if method == "continuum":
            if not homogeneous:
                raise ValueError("continuum sweep is defined for the homogeneous norm")
            vals.append(disk_l2_continuum(a) / disk_cone_norm_continuum(a, beta))
        elif method == "discrete":
            img = render(disk_scene(a), n, supersample)
            vals.append(prior_ratio(img, beta, homogeneous, grid.FOV_SIDE))
        else:
            raise ValueError(f"unknown method {method!r}")
    meta = {"norm": _norm_name(homogeneous), "delta_deg": math.degrees(delta),
            "eps_deg": math.degrees(eps), "method": method}
    if N is not None:
        meta["member"] = [v <= N for v in vals]
    return Curve(tuple(radii), tuple(vals), f"disk_{method}", units="radius", meta=meta)


CSV_HEADER = ("abscissa", "value", "norm", "delta_deg", "eps_deg")


def _fmt(x) -> str:
    return "" if x is None else format(float(x), ".17g")


def write_curves_csv(curves, path_or_file) -> None:
    """Write curves as CSV rows ``abscissa,value,norm,delta_deg,eps_deg``."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for c in curves:
            for x, v in zip(c.abscissa, c.values):
                w.writerow([_fmt(x), _fmt(v), c.meta.get("norm", ""),
                            _fmt(c.meta.get("delta_deg")), _fmt(c.meta.get("eps_deg"))])
    finally:
        if own:
            fh.close()


def write_reports_jsonl(reports, path_or_file) -> None:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w") if own else path_or_file
    try:
        for r in reports:
            fh.write(r.to_json() + "\n")
    finally:
        if own:
            fh.close()
