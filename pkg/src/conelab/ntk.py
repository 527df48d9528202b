"""Shallow network with frozen random kernels on the periodic unit square.

Images here are ``m x m`` samples of periodic functions on ``[0, 1]^2``
(``img[i, j] = f(x1 = j/m, x2 = i/m)``) with Fourier coefficients
``f_hat(zeta) = mean(f * exp(-2 pi i zeta . x))``. Convolutions are circular.

A network ``N(g) = sum_i a_i sigma(K_i * g)`` keeps its kernels ``K_i``
frozen at initialization, so training only fits the readout ``a`` and the
loss is a convex quadratic in ``a``. With the identity activation the output
spectrum never leaves the input spectrum, hence nothing outside the visible
cone is recovered; a leaky ReLU creates harmonics that can.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import grid

DEFAULT_B = 16
DEFAULT_UNITS = 512
DEFAULT_ALPHA = 0.01
DEFAULT_M = 64


class DivergenceError(RuntimeError):
    """Gradient descent increased the loss; the step size is too large."""


class StepSizeError(ValueError):
    """Step size violates ``lr < 1 / lambda_max`` of the feature Gram matrix."""


def check_periodic(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"periodic image must be square, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("periodic image contains non-finite values")
    return arr


def coefficients(img) -> np.ndarray:
    """Fourier series coefficients in FFT order (axis 0: zeta2, axis 1: zeta1)."""
    arr = check_periodic(img)
    return np.fft.fft2(arr) / arr.size


def synthesize(coef) -> np.ndarray:
    coef = np.asarray(coef)
    return np.fft.ifft2(coef * coef.size).real


def modes(m: int):
    """Integer frequencies ``(Z1, Z2)`` of an ``m x m`` periodic grid."""
    return grid.lattice(m)


def band_mask(m: int, B: float) -> np.ndarray:
    Z1, Z2 = modes(m)
    return (Z1**2 + Z2**2 <= B * B).astype(np.float64)


def cone_band(m: int, delta: float, B: float | None = None, include_dc: bool = True) -> np.ndarray:
    Z1, Z2 = modes(m)
    w = grid.cone_weights(Z1, Z2, delta)
    if B is not None:
        w = w * (Z1**2 + Z2**2 <= B * B)
    if not include_dc:
        w[0, 0] = 0.0
    return w


def mode_count(B: int) -> int:
    """Number of ``zeta != 0`` with ``|zeta| <= B``."""
    r = np.arange(-B, B + 1)
    Z1, Z2 = np.meshgrid(r, r)
    return int(np.count_nonzero(Z1**2 + Z2**2 <= B * B)) - 1


@dataclass(frozen=True)
class KernelField:
    """Real random field ``sigma_K sum_{0<|zeta|<=B} Z_zeta exp(2 pi i zeta . x)``.

    ``coef`` holds ``Z`` on ``[-B, B]^2`` (row ``zeta2 + B``, column
    ``zeta1 + B``), zero outside the band and at the origin.
    """

    B: int
    sigma_K: float
    coef: np.ndarray
    seed: object = None

    def spectrum(self, m: int) -> np.ndarray:
        """Fourier coefficients ``sigma_K Z`` on an ``m x m`` grid (FFT order)."""
        if 2 * self.B >= m:
            raise ValueError(f"grid of side {m} cannot hold band {self.B}")
        out = np.zeros((m, m), dtype=np.complex128)
        r = np.arange(-self.B, self.B + 1) % m
        out[np.ix_(r, r)] = self.sigma_K * self.coef
        return out

    def field(self, m: int) -> np.ndarray:
        return synthesize(self.spectrum(m))


def _half_plane(B: int):
    r = np.arange(-B, B + 1)
    Z1, Z2 = np.meshgrid(r, r)
    inside = Z1**2 + Z2**2 <= B * B
    upper = (Z2 > 0) | ((Z2 == 0) & (Z1 > 0))
    return inside & upper


def sample_kernel_field(seed, B: int = DEFAULT_B, sigma_K: float | None = None) -> KernelField:
    """Draw a kernel field.

    Each independent coefficient (one per pair ``+-zeta``) is a standard
    complex normal, real and imaginary parts i.i.d. ``N(0, 1/2)`` so that
    ``E|Z|^2 = 1``; the partner is its conjugate. The field at a point then
    has variance ``sigma_K^2 * mode_count(B)``.
    """
    if B < 1:
        raise ValueError("band B must be >= 1")
    if sigma_K is None:
        sigma_K = 1.0 / math.sqrt(mode_count(B))
    rng = np.random.default_rng(seed)
    return _kernel_from_rng(rng, B, sigma_K, seed)


def _kernel_from_rng(rng, B, sigma_K, seed=None) -> KernelField:
    half = _half_plane(B)
    k = int(half.sum())
    z = (rng.standard_normal(k) + 1j * rng.standard_normal(k)) / math.sqrt(2.0)
    coef = np.zeros((2 * B + 1, 2 * B + 1), dtype=np.complex128)
    coef[half] = z
    # conjugate partner at -zeta: flip both axes around the centre
    coef[half[::-1, ::-1]] = np.conj(z[::-1])
    return KernelField(B, float(sigma_K), coef, seed)


def leaky_relu(x, alpha: float = DEFAULT_ALPHA):
    """``max(0, x) + alpha * min(0, x)``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0) + alpha * np.minimum(x, 0.0)
    return float(out) if out.ndim == 0 else out


def cone_project(img, delta: float) -> np.ndarray:
    """Keep the Fourier modes whose direction lies in the symmetrized cone."""
    arr = check_periodic(img)
    w = cone_band(arr.shape[0], delta)
    return np.fft.ifft2(np.fft.fft2(arr) * w).real


def outside_energy(img, delta: float) -> float:
    """Energy (mean square) of the Fourier modes outside the cone."""
    c = coefficients(img)
    w = cone_band(c.shape[0], delta)
    return float(np.sum(np.abs(c) ** 2 * (1 - w)))


@dataclass
class ShallowNet:
    kernels: list
    a: np.ndarray
    alpha: float = DEFAULT_ALPHA
    delta: float = math.radians(50.0)

    def __post_init__(self):
        if len(self.kernels) < 1:
            raise ValueError("network needs at least one unit")
        self.a = np.asarray(self.a, dtype=np.float64)
        if self.a.shape != (len(self.kernels),):
            raise ValueError("readout length must equal the number of units")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")

    @property
    def n_units(self) -> int:
        return len(self.kernels)

    @property
    def is_linear(self) -> bool:
        return self.alpha == 1

    def spectra(self, m: int) -> np.ndarray:
        return np.stack([k.spectrum(m) for k in self.kernels])


def make_net(seed, n_units: int = DEFAULT_UNITS, B: int = DEFAULT_B,
             sigma_K: float | None = None, alpha: float = DEFAULT_ALPHA,
             delta: float = math.radians(50.0)) -> ShallowNet:
    """Network with ``n_units`` kernels drawn from one seeded stream and ``a = 0``."""
    if n_units < 1:
        raise ValueError("n_units must be >= 1")
    if sigma_K is None:
        sigma_K = 1.0 / math.sqrt(mode_count(B))
    seeds = np.random.SeedSequence(seed).spawn(n_units)
    kernels = [_kernel_from_rng(np.random.default_rng(s), B, sigma_K, seed) for s in seeds]
    return ShallowNet(kernels, np.zeros(n_units), alpha, delta)


def features(net: ShallowNet, g) -> np.ndarray:
    """Unit activations ``sigma(K_i * g)``, shape ``(n_units, m, m)``."""
    arr = check_periodic(g)
    m = arr.shape[0]
    spec = net.spectra(m) * np.fft.fft2(arr)[None]
    pre = np.fft.ifft2(spec).real
    return leaky_relu(pre, net.alpha)


def forward(net: ShallowNet, g) -> np.ndarray:
    phi = features(net, g)
    return np.tensordot(net.a, phi, axes=1)


@dataclass
class TrainTrace:
    losses: np.ndarray
    a: np.ndarray
    lr: float
    steps: int
    lambda_max: float
    outside: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if len(self.losses) == 0 or not np.all(np.isfinite(self.losses)):
            raise ValueError("trace needs finite losses")


@dataclass
class _Problem:
    gram: np.ndarray
    rhs: np.ndarray
    const: float
    outside_gram: np.ndarray
    total_gram: np.ndarray


def _assemble(net: ShallowNet, targets) -> _Problem:
    """Quadratic form of the loss in ``a`` (features are frozen)."""
    n = net.n_units
    m = targets[0].shape[0]
    out_w = 1 - cone_band(m, net.delta)
    G = np.zeros((n, n))
    Q = np.zeros((n, n))
    b = np.zeros(n)
    c = 0.0
    for f in targets:
        phi = features(net, cone_project(f, net.delta)).reshape(n, -1)
        G += phi @ phi.T / phi.shape[1]
        b += phi @ f.ravel() / phi.shape[1]
        c += float(np.mean(f * f))
        # outside-cone part of every feature, real representation
        ph = np.fft.fft2(phi.reshape(n, m, m)) / (m * m)
        sel = ph[:, out_w > 0]
        Q += (sel @ sel.conj().T).real
    k = len(targets)
    return _Problem(G / k, b / k, c / k, Q / k, G / k)


def train_readout(net: ShallowNet, targets, lr: float, steps: int,
                  check_step: bool = True) -> TrainTrace:
    """Full-batch gradient descent on the readout.

    Loss ``L(a) = (1/|D|) sum_f ||N(chi_delta(D) f) - f||^2`` with the mean
    square over the periodic square. With frozen kernels
    ``L(a) = a^T G a - 2 b^T a + c`` where ``G`` is the feature Gram matrix,
    so descent is monotone iff ``lr < 1 / lambda_max(G)``. ``check_step``
    enforces that bound up front; without it a loss increase on two
    consecutive steps raises :class:`DivergenceError`.

    ``net.a`` is the starting point and is updated in place.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    targets = [check_periodic(f) for f in targets]
    if not targets:
        raise ValueError("dataset is empty")
    prob = _assemble(net, targets)
    lam = float(np.linalg.eigvalsh(prob.gram)[-1])
    bound = 1.0 / lam if lam > 0 else math.inf
    if check_step and lr >= bound:
        raise StepSizeError(f"lr={lr:.6g} violates lr < 1/lambda_max = {bound:.6g}")
    a = net.a.copy()
    losses = np.empty(steps + 1)
    outside = np.empty(steps + 1)

    def loss(v):
        return max(float(v @ prob.gram @ v - 2 * prob.rhs @ v + prob.const), 0.0)

    def out_frac(v):
        total = float(v @ prob.total_gram @ v)
        return float(v @ prob.outside_gram @ v) / total if total > 0 else 0.0

    losses[0] = loss(a)
    outside[0] = out_frac(a)
    rises = 0
    for t in range(1, steps + 1):
        a = a - lr * 2 * (prob.gram @ a - prob.rhs)
        losses[t] = loss(a)
        outside[t] = out_frac(a)
        rises = rises + 1 if losses[t] > losses[t - 1] else 0
        if rises >= 2:
            raise DivergenceError(
                f"loss increased on two consecutive steps (step {t}); "
                f"need lr < 1/lambda_max = {bound:.6g}, got {lr:.6g}")
    net.a = a
    return TrainTrace(losses, a, lr, steps, lam, outside)


def safe_lr(net: ShallowNet, targets, fraction: float = 0.9) -> float:
    """``fraction / lambda_max`` of the Gram matrix for this dataset."""
    prob = _assemble(net, [check_periodic(f) for f in targets])
    return fraction / float(np.linalg.eigvalsh(prob.gram)[-1])


def outside_error(net: ShallowNet, targets) -> float:
    """Relative error of the reconstruction restricted to outside-cone modes.

    ``sqrt(sum_f ||P_out (N(chi f) - f)||^2 / sum_f ||P_out f||^2)``.
    """
    num = den = 0.0
    for f in targets:
        out = forward(net, cone_project(f, net.delta))
        num += outside_energy(out - f, net.delta)
        den += outside_energy(f, net.delta)
    if den == 0:
        raise ValueError("targets have no energy outside the cone")
    return math.sqrt(num / den)


def band_limited_dataset(seed, count: int = 8, m: int = DEFAULT_M, B: int = DEFAULT_B,
                         max_ellipses: int = 3) -> list:
    """Random ellipse images low-passed to ``|zeta| <= B`` on the periodic grid.

    Scenes come from :func:`conelab.phantoms.random_ellipse_scene` with the
    field of view ``[-1, 1]^2`` mapped onto the periodic square.
    """
    from .phantoms import derive_seed, random_ellipse_scene, render

    mask = band_mask(m, B)
    out = []
    for i in range(count):
        img = render(random_ellipse_scene(derive_seed(seed, i), max_ellipses), m)
        out.append(np.fft.ifft2(np.fft.fft2(img) * mask).real)
    return out


def rho_transform(rho, alpha: float):
    """Correlation after a leaky ReLU for jointly Gaussian unit inputs.

    ``rho + (1-alpha)^2 / (pi (1+alpha^2)) * (sqrt(1-rho^2) - rho arccos(rho))``,
    i.e. ``E[s(X) s(Y)] / E[s(X)^2]`` for ``corr(X, Y) = rho``.
    """
    r = np.asarray(rho, dtype=np.float64)
    if np.any(np.abs(r) > 1):
        raise ValueError("|rho| must not exceed 1")
    c = (1 - alpha) ** 2 / (math.pi * (1 + alpha * alpha))
    out = r + c * (np.sqrt(1 - r * r) - r * np.arccos(r))
    return float(out) if out.ndim == 0 else out


def mc_corr_check(rho: float, alpha: float, samples: int = 10**6, seed=0):
    """Monte Carlo estimate of :func:`rho_transform` and its standard error.

    Draws ``X = Z1``, ``Y = rho Z1 + sqrt(1 - rho^2) Z2`` and returns the
    normalized second moment ``mean(s(X) s(Y)) / mean((s(X)^2 + s(Y)^2) / 2)``
    with a delta-method standard error. The moment is not centred: the
    closed form describes the kernel ``E[s(X) s(Y)]``, not a Pearson
    coefficient. For ``rho = 1`` the two samples coincide and the estimate
    is exactly 1.
    """
    if samples < 10**4:
        raise ValueError("need at least 1e4 samples")
    if abs(rho) > 1:
        raise ValueError("|rho| must not exceed 1")
    rng = np.random.default_rng(seed)
    z1 = rng.standard_normal(samples)
    z2 = rng.standard_normal(samples)
    x = z1
    y = rho * z1 + math.sqrt(1 - rho * rho) * z2
    sx = leaky_relu(x, alpha)
    sy = leaky_relu(y, alpha)
    A = sx * sy
    Bm = 0.5 * (sx * sx + sy * sy)
    a_bar, b_bar = float(A.mean()), float(Bm.mean())
    r = a_bar / b_bar
    resid = A - r * Bm
    se = float(resid.std(ddof=1) / math.sqrt(samples) / b_bar)
    return r, se


def _offsets(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1:] != (2,):
        raise ValueError("offsets must have a trailing axis of length 2")
    return s


def _cone_coefficients(f, delta, B):
    c = coefficients(f)
    w = cone_band(c.shape[0], delta, B, include_dc=False) > 0
    return c, w


def rho_delta(f, h, s, delta: float, B: int = DEFAULT_B):
    """Normalized cone-band correlation of two images at spatial offset ``s``.

    Sum over ``0 < |zeta| <= B`` in the symmetrized cone of
    ``f_hat conj(h_hat) exp(2 pi i zeta . s)``, divided by the norms of the
    same coefficient sets. ``s`` is an ``(..., 2)`` array of ``(s1, s2)``.
    """
    cf, w = _cone_coefficients(f, delta, B)
    ch, _ = _cone_coefficients(h, delta, B)
    nf = math.sqrt(float(np.sum(np.abs(cf[w]) ** 2)))
    nh = math.sqrt(float(np.sum(np.abs(ch[w]) ** 2)))
    if nf == 0 or nh == 0:
        raise ValueError("image has no energy in the cone band")
    Z1, Z2 = modes(cf.shape[0])
    prod = cf[w] * np.conj(ch[w])
    s = _offsets(s)
    phase = 2 * np.pi * (s[..., :1] * Z1[w] + s[..., 1:] * Z2[w])
    val = (np.exp(1j * phase) @ prod) / (nf * nh)
    out = val.real
    return float(out) if out.ndim == 0 else out


def rho_delta_grid(f, h, delta: float, B: int = DEFAULT_B) -> np.ndarray:
    """``rho_delta`` at every grid offset ``s = (j/m, i/m)`` via one FFT."""
    cf, w = _cone_coefficients(f, delta, B)
    ch, _ = _cone_coefficients(h, delta, B)
    nf = math.sqrt(float(np.sum(np.abs(cf[w]) ** 2)))
    nh = math.sqrt(float(np.sum(np.abs(ch[w]) ** 2)))
    if nf == 0 or nh == 0:
        raise ValueError("image has no energy in the cone band")
    prod = np.where(w, cf * np.conj(ch), 0.0) / (nf * nh)
    vals = np.fft.ifft2(prod) * prod.size
    return np.clip(vals.real, -1.0, 1.0)


@dataclass(frozen=True)
class CZetaReport:
    zetas: tuple
    min_eigenvalues: tuple
    max_imag: float


def c_zeta_check(dataset, delta: float, B: int = DEFAULT_B, zeta_list=None,
                 alpha: float = DEFAULT_ALPHA) -> CZetaReport:
    """Smallest eigenvalue of the matrices ``C_zeta(f, h)`` over the dataset.

    ``C_zeta(f, h)`` is the Fourier coefficient at ``zeta`` of
    ``rho_transform(rho_delta(., f, h), alpha)`` sampled on the grid.
    Matrices are Hermitized before the eigenvalues are taken; ``max_imag``
    records the largest imaginary part removed from the diagonal.
    """
    data = [check_periodic(f) for f in dataset]
    if not data:
        raise ValueError("dataset is empty")
    if len(data) > 16:
        raise ValueError("c_zeta_check is meant for at most 16 images")
    m = data[0].shape[0]
    k = len(data)
    coef = np.empty((k, k, m, m), dtype=np.complex128)
    for p in range(k):
        for q in range(k):
            tr = rho_transform(rho_delta_grid(data[p], data[q], delta, B), alpha)
            coef[p, q] = np.fft.fft2(tr) / (m * m)
    if zeta_list is None:
        zeta_list = [(0, 0)]
    mins = []
    max_imag = 0.0
    for z1, z2 in zeta_list:
        C = coef[:, :, z2 % m, z1 % m]
        max_imag = max(max_imag, float(np.max(np.abs(np.diag(C).imag))))
        H = 0.5 * (C + C.conj().T)
        mins.append(float(np.linalg.eigvalsh(H)[0]))
    return CZetaReport(tuple(tuple(z) for z in zeta_list), tuple(mins), max_imag)


@dataclass(frozen=True)
class SmallSFit:
    A: float
    cubic: float
    predicted: float

    @property
    def relative_error(self) -> float:
        return abs(self.cubic - self.predicted) / abs(self.predicted)


def small_s_fit(f, delta: float, alpha: float = DEFAULT_ALPHA, B: int = DEFAULT_B,
                s_range=(1e-3, 1e-2), points: int = 40, direction=(1.0, 0.0)) -> SmallSFit:
    """Fit the small-offset expansion of ``rho_transform(rho_delta)``.

    Along ``s = t * direction`` the correlation behaves like
    ``1 - (A/2) t^2 + O(t^4)`` and the transform adds
    ``c (A^{3/2}/3) |t|^3 + O(t^4)`` with ``c = (1-alpha)^2/(pi (1+alpha^2))``.
    ``A`` and the cubic coefficient are both fitted by least squares on
    ``t`` in ``s_range``.
    """
    t = np.linspace(s_range[0], s_range[1], points)
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    s = t[:, None] * d[None, :]
    rho = np.asarray(rho_delta(f, f, s, delta, B))
    basis = np.stack([t**2 / 2, t**4], axis=1)
    A = float(np.linalg.lstsq(basis, 1 - rho, rcond=None)[0][0])
    extra = rho_transform(rho, alpha) - rho
    basis = np.stack([np.abs(t) ** 3, t**4, np.abs(t) ** 5], axis=1)
    cubic = float(np.linalg.lstsq(basis, extra, rcond=None)[0][0])
    c = (1 - alpha) ** 2 / (math.pi * (1 + alpha * alpha))
    return SmallSFit(A, cubic, c * A**1.5 / 3)
