import numpy as np
import pytest

from srlab.endpoint import d_endpoint_operator
from srlab.errors import ZeroCovector
from srlab.extremal import (Extremal, abnormal_covectors, exp_map, goh_diagnostics, hamiltonian,
                            hamiltonian_flow, nodes_to_control, normal_controls, reconstruct,
                            shoot_normal)
from srlab.flow import Control, integrate
from srlab.srgeom import preset


def test_hamiltonian_examples(heis, flat2):
    assert hamiltonian(heis, [0, 0, 0], [0, 0, 2.0]) == 0
    assert hamiltonian(heis, [0, 0, 0], [1, 0, 0]) == 0.5
    p = np.array([0.3, -1.2])
    assert np.isclose(hamiltonian(flat2, [5, 1], p), p @ p / 2)


def test_shoot_examples(heis, flat2):
    ext = shoot_normal(heis, [0, 0, 0], [1, 0, 0])
    assert np.allclose(ext.gamma[-1], [1, 0, 0], atol=1e-12)
    assert np.allclose(ext.hamiltonian_values(heis), 0.5)
    assert np.allclose(exp_map(heis, [0, 0, 0], [0, 0, 3.0]), 0)
    assert np.allclose(exp_map(flat2, [1, 1], [0.5, -2]), [1.5, -1])


@pytest.mark.parametrize("name", ["heisenberg", "engel", "martinet"])
def test_hamiltonian_conserved(name, rng):
    fr = preset(name)
    ext = shoot_normal(fr, np.zeros(fr.dim_n), rng.normal(size=fr.dim_n))
    H = ext.hamiltonian_values(fr)
    assert np.max(np.abs(H - H[0])) <= 1e-6 * H[0]


def test_heisenberg_circle_from_vertical_covector(heis):
    # p0 = (1, 0, 2 pi) closes one loop enclosing area 1 / (4 pi)
    end = exp_map(heis, [0, 0, 0], [1, 0, 2 * np.pi], substeps=1024)
    assert np.allclose(end, [0, 0, 1 / (4 * np.pi)], atol=1e-9)


@pytest.mark.parametrize("name", ["heisenberg", "engel"])
def test_loop_closure(name, rng):
    fr = preset(name)
    x0 = np.zeros(fr.dim_n)
    for _ in range(3):
        # piecewise-constant projection of u costs O(1/N^2) in the path
        p0 = rng.normal(size=fr.dim_n)
        ext = shoot_normal(fr, x0, p0 / np.linalg.norm(p0), substeps=1024)
        u = nodes_to_control(normal_controls(fr, ext), 256)
        b = integrate(fr, u, x0, substeps=4)
        rec = reconstruct(b, ext.p[-1], 1)
        assert np.max(np.abs(rec.p - ext.p)) <= 1e-5


@pytest.mark.parametrize("name", ["heisenberg", "engel"])
def test_energy_identity(name, rng):
    fr = preset(name)
    x0 = np.zeros(fr.dim_n)
    p0 = rng.normal(size=fr.dim_n)
    ext = shoot_normal(fr, x0, p0, substeps=512)
    u2 = np.sum(normal_controls(fr, ext) ** 2, axis=1)
    l2 = np.sum(0.5 * (u2[1:] + u2[:-1])) / (len(u2) - 1)
    assert abs(l2 - 2 * hamiltonian(fr, x0, p0)) <= 1e-6 * l2


@pytest.mark.parametrize("lam", [0.5, 2.0])
def test_exp_homogeneity(eng, rng, lam):
    p = rng.normal(size=4)
    x0 = np.zeros(4)
    _, xs, _ = hamiltonian_flow(eng, x0, p, time=lam, steps=512)
    assert np.allclose(exp_map(eng, x0, lam * p, substeps=512), xs[-1], atol=1e-9)


def test_reconstruct_martinet_constant_covector(mart):
    b = integrate(mart, Control.constant([0, 1]), [0, 0, 0])
    ext = reconstruct(b, [0, 0, 1], 0)
    assert ext.kind == "abnormal" and ext.multiplier0 == 0
    assert np.allclose(ext.p, [0, 0, 1], atol=1e-14)


def test_reconstruct_flat_constant(flat2, rng):
    b = integrate(flat2, Control(rng.normal(size=(8, 2))), [0, 0])
    assert np.allclose(reconstruct(b, [1, -2], 1).p, [1, -2])


def test_reconstruct_heisenberg_control_identity(heis):
    b = integrate(heis, Control.constant([1, 0]), [0, 0, 0])
    ext = reconstruct(b, [1, 0, 0], 1)
    u = np.einsum("kni,kn->ki", b.B, ext.p)
    assert np.max(np.abs(u - [1, 0])) <= 1e-8


def test_reconstruct_rejects_zero_abnormal(heis):
    b = integrate(heis, Control.constant([1, 0], 4), [0, 0, 0])
    with pytest.raises(ZeroCovector):
        reconstruct(b, [0, 0, 0], 0)
    with pytest.raises(ValueError):
        reconstruct(b, [1, 0, 0], 2)


def test_abnormal_covectors_examples(flat2, heis, mart):
    assert abnormal_covectors(d_endpoint_operator(integrate(flat2, Control.constant([1, 0]), [0, 0]))) == []
    assert abnormal_covectors(d_endpoint_operator(integrate(heis, Control.constant([1, 0]), [0, 0, 0]))) == []
    op = d_endpoint_operator(integrate(mart, Control.constant([0, 1]), [0, 0, 0]))
    cov = abnormal_covectors(op)
    assert len(cov) == 1
    assert np.allclose(np.abs(cov[0]), [0, 0, 1], atol=1e-10)
    N = op.bundle.control.n_segments
    for lam in cov:
        assert np.sqrt(N) * np.linalg.norm(lam @ op.matrix) <= 1e-9


def test_abnormal_covectors_with_tolerance(mart):
    # slightly off the singular line the image is full but nearly degenerate
    op = d_endpoint_operator(integrate(mart, Control.constant([1e-4, 1]), [0, 0, 0]))
    assert op.corank == 0
    assert len(abnormal_covectors(op, tol=1e-3)) == 1


def test_goh_martinet_singular_line(mart):
    b = integrate(mart, Control.constant([0, 1]), [0, 0, 0])
    op = d_endpoint_operator(b)
    g = goh_diagnostics(reconstruct(b, [0, 0, 1], 0), mart, op.corank, op)
    assert g.residual == 0 and g.goh_holds and g.goh_rank == 1


def test_goh_rank_zero_without_corank(heis, flat2):
    for fr, x0 in ((heis, [0, 0, 0]), (flat2, [0, 0])):
        b = integrate(fr, Control.constant([1, 0]), x0)
        op = d_endpoint_operator(b)
        g = goh_diagnostics(reconstruct(b, np.eye(fr.dim_n)[0], 1), fr, op.corank, op)
        assert g.goh_rank == 0


def test_extremal_csv_roundtrip(tmp_path, heis):
    ext = shoot_normal(heis, [0, 0, 0], [1, 0.5, 0.2], substeps=16)
    path = tmp_path / "ext.csv"
    ext.to_csv(path, heis)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# ") and '"hamiltonian"' in lines[0]
    assert lines[1] == "t,gamma_1,gamma_2,gamma_3,p_1,p_2,p_3"
    back = Extremal.from_csv(path)
    assert np.array_equal(back.gamma, ext.gamma) and np.array_equal(back.p, ext.p)
    assert back.kind == "normal" and back.multiplier0 == 1
