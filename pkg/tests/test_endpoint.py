import json

import numpy as np
import pytest

from srlab.endpoint import (d2_endpoint, d2_endpoint_batch, d2_energy, d_endpoint, d_endpoint_operator,
                            d_energy, endpoint, energy_gradient)
from srlab.errors import SegmentationMismatch
from srlab.flow import Control, energy, integrate
from srlab.srgeom import preset

from conftest import loglog_slope


def smooth_control(rng, N, m=2, modes=3):
    t = (np.arange(N) + 0.5) / N
    vals = np.zeros((N, m))
    for k in range(modes):
        vals += rng.normal(size=m) * np.cos(np.pi * k * t)[:, None] / (k + 1)
    return Control(vals)


def fd_endpoint(frame, u, v, x0, eps=1e-4):
    return (endpoint(frame, u + eps * v, x0) - endpoint(frame, u - eps * v, x0)) / (2 * eps)


def test_endpoint_examples(flat2, heis, mart):
    assert np.allclose(endpoint(flat2, Control.constant([0.3, -2]), [0, 0]), [0.3, -2])
    assert np.allclose(endpoint(heis, Control.constant([1, 0]), [0, 0, 0]), [1, 0, 0])
    assert np.allclose(endpoint(mart, Control.constant([0, 1]), [0, 0, 0]), [0, 1, 0])


def test_d_endpoint_flat(flat2, rng):
    b = integrate(flat2, smooth_control(rng, 16), [0, 0])
    fv = d_endpoint(b, Control.constant([1, 0], 16))
    assert np.allclose(fv.d_endpoint, [1, 0])
    assert not np.any(fv.delta1[0])


def test_d_endpoint_heisenberg_vertical_direction(heis):
    # gamma(t) = (t, 0, 0); E(u + e v) = (1, e, 0) for every e, so the exact
    # derivative is (0, 1, 0)
    u, v = Control.constant([1, 0]), Control.constant([0, 1])
    b = integrate(heis, u, [0, 0, 0])
    got = d_endpoint(b, v).d_endpoint
    assert np.allclose(got, [0, 1, 0], atol=1e-12)
    assert np.allclose(got, fd_endpoint(heis, u, v, [0, 0, 0]), atol=1e-9)


def test_d_endpoint_zero_direction(eng, rng):
    b = integrate(eng, smooth_control(rng, 16), np.zeros(4))
    assert not np.any(d_endpoint(b, Control.zeros(2, 16)).d_endpoint)


@pytest.mark.parametrize("name", ["heisenberg", "martinet", "engel"])
def test_d_endpoint_matches_finite_differences(name, rng):
    fr = preset(name)
    x0 = np.zeros(fr.dim_n)
    for _ in range(7):
        u = smooth_control(rng, 32)
        v = smooth_control(rng, 32)
        d = d_endpoint(integrate(fr, u, x0), v).d_endpoint
        assert np.linalg.norm(d - fd_endpoint(fr, u, v, x0)) <= 1e-5 * (1 + np.linalg.norm(d))


def test_d_endpoint_linear(eng, rng):
    b = integrate(eng, smooth_control(rng, 32), np.zeros(4))
    v, w = smooth_control(rng, 32), smooth_control(rng, 32)
    a, c = 1.7, -0.4
    lhs = d_endpoint(b, a * v + c * w).d_endpoint
    rhs = a * d_endpoint(b, v).d_endpoint + c * d_endpoint(b, w).d_endpoint
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_segmentation_mismatch(heis):
    b = integrate(heis, Control.constant([1, 0], 8), [0, 0, 0])
    with pytest.raises(SegmentationMismatch):
        d_endpoint(b, Control.constant([0, 1], 16))
    with pytest.raises(SegmentationMismatch):
        d2_endpoint(b, Control.constant([0, 1], 16))
    with pytest.raises(SegmentationMismatch):
        d_energy(Control.constant([1, 0], 8), Control.constant([0, 1], 16))


def test_operator_reproduces_d_endpoint(mart, rng):
    b = integrate(mart, smooth_control(rng, 16), [0, 0, 0])
    op = d_endpoint_operator(b)
    v = smooth_control(rng, 16)
    assert np.allclose(op.matrix @ v.flat(), d_endpoint(b, v).d_endpoint, atol=1e-10)
    assert op.corank == 3 - np.sum(op.singular_values > 1e-9 * max(op.singular_values[0], 1))


def test_operator_corank_examples(flat2, mart, heis):
    assert d_endpoint_operator(integrate(flat2, Control.constant([1, 2], 8), [0, 0])).corank == 0
    assert d_endpoint_operator(integrate(mart, Control.constant([0, 1]), [0, 0, 0])).corank == 1
    assert d_endpoint_operator(integrate(heis, Control.constant([1, 0]), [0, 0, 0])).corank == 0


@pytest.mark.parametrize("name,u", [("heisenberg", [1, 0]), ("martinet", [0, 1]), ("engel", [1, 0]),
                                    ("martinet", [1, 0.5])])
def test_corank_stable_under_refinement(name, u):
    fr = preset(name)
    x0 = np.zeros(fr.dim_n)
    c = [d_endpoint_operator(integrate(fr, Control.constant(u, N), x0)).corank for N in (64, 128)]
    assert c[0] == c[1]


def test_d2_endpoint_zero_cases(flat2, eng, rng):
    b = integrate(flat2, smooth_control(rng, 16), [0, 0])
    assert np.allclose(d2_endpoint(b, smooth_control(rng, 16)), 0)
    b = integrate(eng, smooth_control(rng, 16), np.zeros(4))
    assert not np.any(d2_endpoint(b, Control.zeros(2, 16)))


def test_d2_endpoint_heisenberg_taylor(heis):
    u, v = Control.constant([1, 0]), Control.constant([0, 1])
    b = integrate(heis, u, [0, 0, 0])
    eps = 1e-3
    taylor = (endpoint(heis, u + eps * v, [0, 0, 0]) - b.endpoint - eps * d_endpoint(b, v).d_endpoint) * 2 / eps ** 2
    got = d2_endpoint(b, v)
    assert np.linalg.norm(got - taylor) <= 1e-3 * max(np.linalg.norm(got), 1e-3)


def test_d2_endpoint_second_difference_oracle(mart, rng):
    u = smooth_control(rng, 32)
    v = smooth_control(rng, 32)
    b = integrate(mart, u, [0, 0, 0])
    eps = 1e-3
    fd = (endpoint(mart, u + eps * v, [0, 0, 0]) - 2 * b.endpoint + endpoint(mart, u - eps * v, [0, 0, 0])) / eps ** 2
    got = d2_endpoint(b, v)
    assert np.linalg.norm(got - fd) <= 1e-4 * (1 + np.linalg.norm(got))


@pytest.mark.parametrize("name", ["heisenberg", "martinet", "engel"])
def test_taylor_remainder(name, rng):
    fr = preset(name)
    x0 = np.zeros(fr.dim_n)
    u = smooth_control(rng, 32)
    v = smooth_control(rng, 32)
    v = v * (1 / np.sqrt(v.l2_norm2()))
    b = integrate(fr, u, x0)
    d1, d2 = d_endpoint(b, v).d_endpoint, d2_endpoint(b, v)
    scales = np.geomspace(1e-1, 1e-3, 5)
    res = [np.linalg.norm(endpoint(fr, u + s * v, x0) - b.endpoint - s * d1 - 0.5 * s * s * d2) for s in scales]
    if name == "heisenberg":
        # E is exactly quadratic in u for this frame
        assert max(res) <= 1e-12
    else:
        assert loglog_slope(scales, res) >= 2.7


def test_d2_batch_matches_single(eng, rng):
    b = integrate(eng, smooth_control(rng, 16), np.zeros(4))
    vs = [smooth_control(rng, 16) for _ in range(3)]
    batch = d2_endpoint_batch(b, np.array([v.values for v in vs]))
    for k, v in enumerate(vs):
        assert np.allclose(batch[k], d2_endpoint(b, v), atol=1e-13)


def test_energy_differentials(rng):
    u = Control.constant([1, 0])
    assert np.isclose(d_energy(u, Control.constant([1, 0])), 1)
    assert d_energy(u, Control.constant([0, 1])) == 0
    assert np.isclose(d2_energy(Control.constant([3, 4])), 25)
    w = smooth_control(rng, 64)
    v = smooth_control(rng, 64)
    eps = 1e-6
    fd = (energy(w + eps * v) - energy(w - eps * v)) / (2 * eps)
    assert np.isclose(d_energy(w, v), fd, rtol=1e-7)
    assert np.isclose(energy_gradient(w) @ v.flat(), d_energy(w, v))


def test_operator_dump(tmp_path, mart):
    op = d_endpoint_operator(integrate(mart, Control.constant([0, 1], 8), [0, 0, 0]))
    op.dump(tmp_path / "op.csv", tmp_path / "op.json")
    M = np.loadtxt(tmp_path / "op.csv", delimiter=",")
    assert np.array_equal(M, op.matrix)
    meta = json.loads((tmp_path / "op.json").read_text())
    assert meta["corank"] == 1 and len(meta["singular_values"]) == 3
