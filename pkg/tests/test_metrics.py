import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from patchpcc import metrics as M
from patchpcc.metrics import MetricsReport, chamfer, evaluate, mse_d1, mse_d2, psnr_d1, psnr_d2, sdv


def brute_nn(ref, q):
    d2 = ((q[:, None, :] - ref[None, :, :]) ** 2).sum(-1)
    return d2.argmin(axis=1), d2.min(axis=1)


def brute_chamfer(a, b):
    return brute_nn(b, a)[1].mean() + brute_nn(a, b)[1].mean()


def brute_sdv(s):
    d2 = ((s[:, None] - s[None]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    m = d2.min(axis=1)
    return ((m - m.mean()) ** 2).mean()


def brute_d2(a, b):
    def one(ref, q):
        na, valid = M.estimate_normals(ref)
        idx, d2 = brute_nn(ref, q)
        proj = ((q - ref[idx]) * na[idx]).sum(axis=1) ** 2
        return np.where(valid[idx], proj, d2).mean()
    return max(one(b, a), one(a, b))


def test_chamfer_examples():
    assert chamfer([[0, 0, 0]], [[1, 0, 0]]) == 2.0
    assert chamfer([[0, 0, 0], [1, 0, 0]], [[0, 0, 0]]) == 0.5
    s = np.random.default_rng(0).normal(size=(20, 3))
    assert chamfer(s, s) == 0.0


def test_d1_examples():
    s = np.random.default_rng(1).normal(size=(10, 3))
    assert psnr_d1(s, s) == math.inf
    assert psnr_d1([[0, 0, 0]], [[0.1, 0, 0]], peak=1.0) == pytest.approx(20.0, abs=1e-9)
    a, b = s, s + 0.01
    assert psnr_d1(a, b) == psnr_d1(b, a)


def test_d2_plane_projection():
    g = np.linspace(0, 1, 6)
    plane = np.array([[x, y, 0.0] for x in g for y in g])
    test = plane[[14]] + np.array([[0.03, 0.0, 0.1]])
    na = M.estimate_normals(plane)
    err = M._plane_errors(plane, na[0], na[1], test)
    assert err[0] == pytest.approx(0.01, abs=1e-12)
    s = np.random.default_rng(2).normal(size=(30, 3))
    assert psnr_d2(s, s) == math.inf


def test_sdv_examples():
    assert sdv(np.array([[0, 0, 0], [1, 0, 0], [3, 0, 0]], dtype=float)) == pytest.approx(2.0, abs=1e-12)
    line = np.array([[i * 0.3, 0, 0] for i in range(10)])
    assert sdv(line) == pytest.approx(0.0, abs=1e-15)
    dup = np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0]], dtype=float)
    assert M.self_distances(dup).tolist() == [0.0, 0.0, 1.0]
    with pytest.raises(ValueError):
        sdv(np.zeros((1, 3)))


def test_uc_semantics():
    s = np.random.default_rng(3).normal(size=(50, 3))
    assert M.uniformity_coefficient(s, s) == 1.0
    line = np.array([[i * 0.5, 0, 0] for i in range(8)])
    assert math.isnan(M.uniformity_coefficient(s, line))
    grid = np.stack(np.meshgrid(*[np.arange(4) * 0.25] * 3), -1).reshape(-1, 3)
    assert M.uniformity_coefficient(grid, s) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_brute_force_agreement(seed):
    rng = np.random.default_rng(seed)
    na, nb = rng.integers(9, 257, size=2)
    a = rng.normal(size=(na, 3))
    b = rng.normal(size=(nb, 3)) if rng.random() < 0.8 else a[rng.permutation(na)][: max(9, na // 2)] + 0.1
    assert chamfer(a, b) == brute_chamfer(a, b)
    assert sdv(a) == brute_sdv(a)
    assert mse_d1(a, b) == max(brute_nn(b, a)[1].mean(), brute_nn(a, b)[1].mean())
    assert mse_d2(a, b) == brute_d2(a, b)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_invariances(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(40, 3)), rng.normal(size=(35, 3))
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    t, s = rng.normal(size=3), float(rng.uniform(0.5, 3.0))
    assert chamfer(a, b) == pytest.approx(chamfer(b, a), rel=1e-12)
    assert chamfer(a @ q + t, b @ q + t) == pytest.approx(chamfer(a, b), rel=1e-9)
    assert chamfer(a * s, b * s) == pytest.approx(s * s * chamfer(a, b), rel=1e-9)
    assert sdv(a @ q + t) == pytest.approx(sdv(a), rel=1e-8)
    assert sdv(a * s) == pytest.approx(s ** 4 * sdv(a), rel=1e-9)
    assert M.uniformity_coefficient(b * s, a * s) == pytest.approx(M.uniformity_coefficient(b, a), rel=1e-9)
    assert psnr_d2(a, b) >= psnr_d1(a, b) - 1e-12


def test_report_line_roundtrip():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(60, 3)), rng.normal(size=(50, 3))
    rep = evaluate(a, b, peak=2.0, bpp=0.5)
    line = rep.to_line()
    assert [kv.split("=")[0] for kv in line.split()] == [
        "chamfer", "d1_psnr", "d2_psnr", "sdv_source", "sdv_recon", "uc", "bpp"]
    assert MetricsReport.from_line(line) == rep
    assert rep.chamfer == chamfer(a, b)
    assert rep.d1_psnr == psnr_d1(a, b, 2.0)
    assert rep.d2_psnr == psnr_d2(a, b, 2.0)
    assert rep.uc == rep.sdv_recon / rep.sdv_source
    same = evaluate(a, a)
    assert same.chamfer == 0 and same.uc == 1 and same.d1_psnr == math.inf
    assert math.isinf(MetricsReport.from_line(same.to_line()).d2_psnr)
