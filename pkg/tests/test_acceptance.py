"""Acceptance criteria 1-13.

Every test records one line in ``conftest.ACCEPTANCE`` which is printed in
the terminal summary as ``criterion k: PASS/FAIL detail``.
"""

import math

import numpy as np
import pytest

from conelab import cli, grid, io, ntk, phantoms, radon
from conelab import diagnostics as dg
from conelab.radon import AngleSet

from .conftest import ACCEPTANCE

DELTAS_DEG = (40, 50, 60)


def record(k, ok, detail):
    ACCEPTANCE.append((k, bool(ok), detail))
    assert ok, f"criterion {k}: {detail}"


@pytest.fixture(scope="module")
def ellipse_dataset_200():
    return phantoms.generate_dataset(seed=2023, count=200, n=128, max_ellipses=5)


@pytest.fixture(scope="module")
def ntk_arms():
    delta = math.radians(50)
    data = ntk.band_limited_dataset(seed=17, count=8, m=64, B=16)
    out = {}
    for name, alpha in (("linear", 1.0), ("nonlinear", 0.01)):
        net = ntk.make_net(17, n_units=512, B=16, alpha=alpha, delta=delta)
        trace = ntk.train_readout(net, data, ntk.safe_lr(net, data), 500)
        out[name] = (net, trace)
    return data, out


def test_criterion_01_adjoint():
    rng = np.random.default_rng(1)
    n, angles, n_p = 128, AngleSet(math.radians(50), 90), 181
    worst = 0.0
    for _ in range(20):
        f = rng.standard_normal((n, n))
        g = radon.Sinogram(rng.standard_normal((n_p, 90)), angles)
        rf = radon.radon_forward(f, angles, n_p)
        err = abs(rf.inner(g) - grid.inner(f, radon.radon_adjoint(g, n))) / (rf.norm() * g.norm())
        worst = max(worst, err)
    record(1, worst < 1e-10, f"worst relative adjoint mismatch {worst:.2e} (< 1e-10)")


def test_criterion_02_fourier_slice():
    n = 256
    worst = 0.0
    scenes = [phantoms.disk_scene(0.5), phantoms.random_ellipse_scene(phantoms.derive_seed(2, 0))]
    for scene in scenes:
        img = phantoms.render(scene, n)
        sino = radon.radon_forward(img, AngleSet(math.radians(50), 41), 363)
        worst = max(worst, radon.fourier_slice(sino, img, band_fraction=0.5).mean_error)
    record(2, worst < 5e-2, f"mean per-angle slice error {worst:.4f} (< 0.05)")


def test_criterion_03_full_angle_fbp():
    n = 256
    X1, X2 = grid.grid(n)
    f = np.exp(-((X1 - 0.2) ** 2 + (X2 + 0.1) ** 2) / (2 * 0.15**2))
    rec = radon.fbp(radon.radon_forward(f, AngleSet(math.pi / 2, 180), 363), n)
    err = np.linalg.norm(rec - f) / np.linalg.norm(f)
    record(3, err < 0.05, f"relative L2 error {err:.4f} (< 0.05)")


def _three_ellipse_scene():
    seed = 0
    while True:
        scene = phantoms.random_ellipse_scene(phantoms.derive_seed(3, seed), 3)
        if len(scene.shapes) == 3:
            return scene
        seed += 1


def test_criterion_04_visible_invisible():
    n = 256
    rows = []
    for name, scene in (("disk", phantoms.disk_scene(0.5)), ("ellipses", _three_ellipse_scene())):
        img = phantoms.render(scene, n)
        for d in DELTAS_DEG:
            delta = math.radians(d)
            sino = phantoms.measure(scene, AngleSet(delta, 8 * d + 1), 2 * n + 1)
            rec = radon.fbp(sino, n)
            out = grid.outside_cone_fraction(rec, delta)
            agree = grid.cone_agreement(rec, grid.cone_filter_padded(img, delta), delta)
            rows.append((name, d, out, agree))
    worst_out = max(r[2] for r in rows)
    worst_agree = min(r[3] for r in rows)
    ok = worst_out < 0.02 and worst_agree > 0.90
    record(4, ok, f"max outside-cone energy {worst_out:.4f} (< 0.02), "
                  f"min in-cone agreement {worst_agree:.4f} (> 0.90)")


def test_criterion_05_first_inequality():
    ds = phantoms.generate_dataset(seed=5, count=100, n=128, max_ellipses=5)
    failures, worst = 0, -math.inf
    for d in DELTAS_DEG:
        delta = math.radians(d)
        for i, img in enumerate(ds.images):
            rep = dg.check_stability(img, delta, sino=dg.measurement(ds, i, delta))
            failures += not rep.satisfied
            worst = max(worst, rep.lhs / rep.rhs)
    record(5, failures == 0, f"{failures} failures over 300 checks, max lhs/rhs {worst:.3f}")


def test_criterion_06_n_beta(ellipse_dataset_200):
    curve = dg.n_beta_curve(ellipse_dataset_200, range(30, 91, 5))
    vals = dict(zip(curve.abscissa, curve.values))
    n60 = vals[60.0]
    monotone = all(x >= y for x, y in zip(curve.values, curve.values[1:]))
    ok = 1.0 <= n60 <= 1.6 and monotone
    record(6, ok, f"N_60 = {n60:.3f} (in [1.0, 1.6]), monotone non-increasing: {monotone}")


def test_criterion_07_second_inequality(ellipse_dataset_200):
    exact = 1 / (math.pi * 4.8**4)
    eps12 = dg.eps_threshold(1.2)
    # checked against the closed form 1 / (pi 4.8^4) = 5.99634e-4; the quoted
    # 5.997e-4 is off in the fourth digit, while 0.0344 deg agrees
    formula_ok = abs(eps12 - exact) <= 1e-9 * exact and round(math.degrees(eps12), 4) == 0.0344
    ds = ellipse_dataset_200
    failures, worst = 0, -math.inf
    used = []
    for d in (50, 60):
        delta = math.radians(d)
        N = dg.n_beta(ds, delta)
        for _ in range(3):  # fixed point of N(delta + eps(N)/2)
            eps = dg.eps_threshold(N) / 2
            N = dg.n_beta(ds, delta + eps)
        used.append((d, N, eps))
        for i, img in enumerate(ds.images):
            rep = dg.check_stability(img, delta, eps, 2, sino=dg.measurement(ds, i, delta))
            failures += not rep.satisfied
            worst = max(worst, rep.lhs / (2 * rep.rhs))
    detail = (f"eps_threshold(1.2) = {eps12:.6e} rad = {math.degrees(eps12):.4f} deg; "
              + ", ".join(f"delta={d}: N={N:.3f} eps={eps:.2e}" for d, N, eps in used)
              + f"; {failures} failures, max lhs/(2 rhs) {worst:.3f}")
    record(7, formula_ok and failures == 0, detail)


def test_criterion_08_disk_scaling(tmp_path):
    beta = math.radians(52)
    c1, l1 = dg.disk_cone_norm_continuum(1.0, beta), dg.disk_l2_continuum(1.0)
    err = 0.0
    for a in (0.1, 0.25, 0.5, 0.8, 0.9):
        err = max(err, abs(dg.disk_cone_norm_continuum(a, beta) / c1 / a**1.5 - 1),
                  abs(dg.disk_l2_continuum(a) / l1 / a - 1))
    radii = [round(0.1 * k, 1) for k in range(1, 10)]
    curves = [dg.disk_sweep(radii, math.radians(50), math.radians(2), h, "discrete", n=128)
              for h in (True, False)]
    path = tmp_path / "sweep.csv"
    dg.write_curves_csv(curves, path)
    lines = path.read_text().splitlines()
    norms = {ln.split(",")[2] for ln in lines[1:]}
    ok = err < 1e-6 and norms == {"homogeneous", "inhomogeneous"} and len(lines) == 19
    record(8, ok, f"max relative scaling error {err:.1e} (< 1e-6); "
                  f"CSV rows {len(lines) - 1} for norms {sorted(norms)}")


def test_criterion_09_arc_cosine():
    worst = 0.0
    for i, rho in enumerate((-0.9, -0.5, 0.0, 0.5, 0.9)):
        for j, alpha in enumerate((0.0, 0.01, 0.2)):
            emp, se = ntk.mc_corr_check(rho, alpha, 10**6, seed=[9, i, j])
            worst = max(worst, abs(emp - ntk.rho_transform(rho, alpha)) / se)
    exact = ntk.rho_transform(1.0, 0.01) == 1.0 and ntk.rho_transform(1.0, 0.0) == 1.0
    exact &= abs(ntk.rho_transform(0.0, 0.0) - 1 / math.pi) < 1e-15
    record(9, worst < 3 and exact, f"max |z| = {worst:.2f} over 15 cells (< 3); exact values: {exact}")


def test_criterion_10_linear_obstruction(ntk_arms):
    data, arms = ntk_arms
    net, trace = arms["linear"]
    delta = net.delta
    init = ntk.make_net(17, n_units=512, B=16, alpha=1.0, delta=delta)
    init.a = np.random.default_rng(0).standard_normal(512)
    rel0 = max(ntk.outside_energy(o, delta) / np.mean(o**2)
               for o in (ntk.forward(init, ntk.cone_project(f, delta)) for f in data))
    rel = max(ntk.outside_energy(o, delta) / np.mean(o**2)
              for o in (ntk.forward(net, ntk.cone_project(f, delta)) for f in data))
    worst = max(rel0, rel, float(np.max(trace.outside)))
    record(10, worst < 1e-12, f"max outside-cone relative energy {worst:.1e} (< 1e-12), "
                              f"{trace.steps} steps")


def test_criterion_11_nonlinear_recovery(ntk_arms):
    data, arms = ntk_arms
    lin = ntk.outside_error(arms["linear"][0], data)
    non = ntk.outside_error(arms["nonlinear"][0], data)
    losses = arms["nonlinear"][1].losses
    monotone = bool(np.all(np.diff(losses) <= 0))
    gain = 1 - non / lin
    record(11, gain >= 0.20 and monotone,
           f"outside-cone error linear {lin:.4f}, leaky {non:.4f}, improvement {gain:.1%} "
           f"(>= 20%); loss non-increasing: {monotone}")


def test_criterion_12_small_s():
    f = ntk.band_limited_dataset(seed=12, count=1, m=64, B=16)[0]
    fit = ntk.small_s_fit(f, math.radians(50), alpha=0.01, B=16)
    record(12, fit.relative_error < 0.10,
           f"cubic coefficient {fit.cubic:.5g} vs predicted {fit.predicted:.5g}, "
           f"relative error {fit.relative_error:.2%} (< 10%)")


def _pipeline(root):
    cli.main(["phantom", "--kind", "ellipses", "--seed", "13", "--count", "2", "--n", "64",
              "--out", str(root / "ph")])
    cli.main(["sino", "--input", str(root / "ph"), "--delta-deg", "50", "--noise-rel", "0.01",
              "--seed", "13", "--out", str(root / "sino")])
    cli.main(["fbp", "--input", str(root / "sino" / "sino_00000.clf"), "--n", "64",
              "--reference", str(root / "ph" / "img_00000.clf"), "--out", str(root / "rec.clf")])
    cli.main(["diag", "nbeta", "--data", str(root / "ph"), "--out", str(root / "nbeta.csv")])
    cli.main(["ntk", "rho-check", "--seed", "13", "--samples", "20000",
              "--out", str(root / "rho.csv")])
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_13_determinism_and_io(tmp_path):
    first = _pipeline(tmp_path / "a")
    second = _pipeline(tmp_path / "b")
    identical = first == second and len(first) >= 12
    rng = np.random.default_rng(13)
    vals = rng.standard_normal((33, 17)) * 10.0 ** rng.integers(-300, 300, (33, 17))
    vals[0, :4] = [np.nan, np.inf, -np.inf, -0.0]
    io.write_raster(tmp_path / "r.clf", vals)
    back, _ = io.read_raster(tmp_path / "r.clf")
    bit_exact = back.tobytes() == vals.tobytes()
    record(13, identical and bit_exact,
           f"{len(first)} output files byte-identical across runs: {identical}; "
           f"CLF1 round trip bit-exact: {bit_exact}")
