import math
import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from wjko.domain import icosahedron, make_grid_domain, mesh_domain
from wjko.kernels import (AnisotropyField, AnisotropyWarning, HeatKernelConfig, KernelError,
                          anisotropic_laplacian, cotangent_laplacian, gaussian_grid_kernel,
                          grid_laplacian, heat_kernel, laplacian_for)


def dense_gaussian(domain, gamma):
    xy = domain.coordinates()
    c = ((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1)
    return np.exp(-c / gamma)


def l_shape(n=6):
    mask = np.ones((n, n), bool)
    mask[: n // 2, n // 2:] = False
    return make_grid_domain(n, n, mask=mask)


# -- Gaussian ---------------------------------------------------------------

def test_gaussian_single_node_is_identity():
    k = gaussian_grid_kernel(make_grid_domain(1, 1), 0.7)
    assert np.array_equal(k.apply(np.array([3.0])), [3.0])


def test_gaussian_two_nodes():
    k = gaussian_grid_kernel(make_grid_domain(2, 1), 1.0)
    assert np.allclose(k.apply(np.array([1.0, 0.0])), [1.0, math.exp(-1)], rtol=0, atol=1e-15)


def test_gaussian_matches_dense_matrix():
    d = make_grid_domain(8, 8)
    k = gaussian_grid_kernel(d, 0.5)
    p = np.random.default_rng(0).random(d.n)
    assert np.max(np.abs(k.apply(p) - dense_gaussian(d, 0.5) @ p)) <= 1e-12


def test_gaussian_nonsquare_spacing():
    d = make_grid_domain(5, 3, spacing=0.4)
    k = gaussian_grid_kernel(d, 0.3)
    p = np.random.default_rng(1).random(d.n)
    assert np.max(np.abs(k.apply(p) - dense_gaussian(d, 0.3) @ p)) <= 1e-12


def test_gaussian_rejects_mask():
    with pytest.raises(KernelError, match="Gaussian kernel requires full grid; use heat kernel"):
        gaussian_grid_kernel(l_shape(), 1.0)


# -- Laplacians ---------------------------------------------------------------

def test_grid_laplacian_constant_and_stencil():
    lap = grid_laplacian(make_grid_domain(3, 1))
    assert np.array_equal(lap @ np.ones(3), np.zeros(3))
    assert np.array_equal(lap @ np.array([0.0, 1.0, 0.0]), [1.0, -2.0, 1.0])


def test_grid_laplacian_spacing_scale():
    lap = grid_laplacian(make_grid_domain(3, 1, spacing=0.5))
    assert np.array_equal(lap @ np.array([0.0, 1.0, 0.0]), [4.0, -8.0, 4.0])


def test_grid_laplacian_l_shape_drops_links():
    d = l_shape(6)
    lap = grid_laplacian(d).toarray()
    assert np.array_equal(lap, lap.T)
    assert np.array_equal(lap.sum(axis=1), np.zeros(d.n))
    # cells (2,2) and (2,3) lie on both sides of the cut-out; (2,3) is masked
    assert d.index[2, 3] == -1
    # a cell left of the notch and the cell below the notch are never linked
    i, j = d.index[2, 2], d.index[3, 3]
    assert lap[i, j] == 0.0
    off = lap - np.diag(np.diag(lap))
    assert off.min() >= 0


def test_cotangent_equilateral():
    v = [[0, 0, 0], [1, 0, 0], [0.5, math.sqrt(3) / 2, 0]]
    lap = cotangent_laplacian(mesh_domain(v, [[0, 1, 2]])).toarray()
    off = lap[~np.eye(3, dtype=bool)]
    assert np.allclose(off, 1 / (2 * math.sqrt(3)), rtol=0, atol=1e-12)
    assert np.array_equal(lap @ np.ones(3), np.zeros(3))


def test_cotangent_icosahedron_symmetric_negative():
    v, f = icosahedron()
    lap = cotangent_laplacian(mesh_domain(v, f))
    assert (lap != lap.T).nnz == 0
    assert np.array_equal(lap @ np.ones(12), np.zeros(12))
    rng = np.random.default_rng(2)
    for _ in range(100):
        x = rng.standard_normal(12)
        assert x @ (lap @ x) <= 1e-12


def test_cotangent_degenerate_triangle_named():
    v = [[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]]
    with pytest.raises(KernelError, match="degenerate triangle 1"):
        cotangent_laplacian(mesh_domain(v, [[0, 1, 3], [0, 1, 2]]))


def test_anisotropic_identity_reduces_to_grid():
    d = l_shape(7)
    t = AnisotropyField.constant(d.n, 1.0, 0.0, 1.0)
    diff = anisotropic_laplacian(d, t) - grid_laplacian(d)
    assert abs(diff).max() <= 1e-12


def test_anisotropic_diag_hand_assembly():
    d = make_grid_domain(4, 4)
    lap = anisotropic_laplacian(d, AnisotropyField.constant(d.n, 2.0, 0.0, 1.0)).toarray()
    # x-links weigh 2, y-links weigh 1, diagonal closes the rows
    expect = np.zeros((16, 16))
    for y in range(4):
        for x in range(4):
            i = d.index[y, x]
            if x + 1 < 4:
                j = d.index[y, x + 1]
                expect[i, j] = expect[j, i] = 2.0
            if y + 1 < 4:
                j = d.index[y + 1, x]
                expect[i, j] = expect[j, i] = 1.0
    expect -= np.diag(expect.sum(axis=1))
    assert np.array_equal(lap, expect)


def test_anisotropic_rotated_constant_vector():
    d = l_shape(8)
    t = AnisotropyField.circular(d, 3.0)
    lap = anisotropic_laplacian(d, t)
    assert np.array_equal(lap @ np.ones(d.n), np.zeros(d.n))
    assert (lap != lap.T).nnz == 0


def test_anisotropic_linear_function_in_interior():
    # a consistent stencil reproduces div(T grad u) = 0 for linear u and constant T
    d = make_grid_domain(7, 7)
    t = AnisotropyField.constant(d.n, 2.0, 0.5, 1.5)
    lap = anisotropic_laplacian(d, t)
    xy = d.coordinates()
    u = 0.3 * xy[:, 0] - 0.7 * xy[:, 1]
    inner = (d.cells[:, 0] > 0) & (d.cells[:, 0] < 6) & (d.cells[:, 1] > 0) & (d.cells[:, 1] < 6)
    assert np.max(np.abs((lap @ u)[inner])) <= 1e-12


def test_anisotropic_non_spd_names_cell():
    with pytest.raises(KernelError, match="cell 2"):
        AnisotropyField(np.array([1.0, 1, -1]), np.zeros(3), np.ones(3))


def test_anisotropic_strong_tensor_warns():
    d = make_grid_domain(5, 5)
    # |txy| > txx: the x-links would need a negative weight
    t = AnisotropyField.constant(d.n, 1.0, 1.5, 4.0)
    with pytest.warns(AnisotropyWarning):
        anisotropic_laplacian(d, t)


def test_anisotropic_diagonally_dominant_is_silent():
    d = make_grid_domain(5, 5)
    t = AnisotropyField.constant(d.n, 1.0, 0.9, 1.0)  # ratio 19, still dominant
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        lap = anisotropic_laplacian(d, t)
    off = lap - sp.diags(lap.diagonal())
    assert off.min() >= 0


def test_anisotropy_csv(tmp_path):
    d = make_grid_domain(2, 2)
    p = tmp_path / "t.csv"
    p.write_text("cell_x,cell_y,txx,txy,tyy\n0,0,1,0,1\n1,0,2,0.1,1\n0,1,1,0,3\n1,1,1,0,1\n")
    t = AnisotropyField.from_csv(p, d)
    assert t.txx[d.index[0, 1]] == 2.0 and t.tyy[d.index[1, 0]] == 3.0
    p.write_text("cell_x,cell_y,txx,txy,tyy\n0,0,1,0,1\n")
    with pytest.raises(KernelError, match="no tensor for active cell"):
        AnisotropyField.from_csv(p, d)


def test_anisotropy_ratio():
    d = make_grid_domain(6, 6)
    assert AnisotropyField.circular(d, 10.0).ratio() == pytest.approx(10.0)


# -- heat kernel ------------------------------------------------------------

def test_heat_single_node():
    k = heat_kernel(sp.csr_matrix((1, 1)), HeatKernelConfig(gamma=3.0, L=4))
    assert np.array_equal(k.apply(np.array([2.5])), [2.5])


def test_heat_default_substeps():
    assert HeatKernelConfig(gamma=1.0).L == 10


@pytest.mark.parametrize("bad", [dict(gamma=0.0), dict(gamma=1.0, L=0), dict(gamma=1.0, tol=1e-3),
                                 dict(gamma=1.0, solver="lu")])
def test_heat_config_validation(bad):
    with pytest.raises(KernelError):
        HeatKernelConfig(**bad)


def periodic_chain(n):
    i = np.arange(n)
    a = sp.coo_matrix((np.ones(n), (i, (i + 1) % n)), shape=(n, n))
    return (a + a.T - 2 * sp.identity(n)).tocsr()


def test_heat_fourier_periodic_chain():
    n, gamma, L = 64, 5.0, 10
    k = heat_kernel(periodic_chain(n), HeatKernelConfig(gamma, L))
    lam = 4 * np.sin(np.pi * np.arange(n) / n) ** 2
    v = np.random.default_rng(5).random(n)
    expect = np.real(np.fft.ifft(np.fft.fft(v) * (1 + gamma / L * lam) ** (-L)))
    assert np.max(np.abs(k.apply(v) - expect)) <= 1e-8


def kernels_under_test():
    grid = l_shape(8)
    v, f = icosahedron()
    mesh = mesh_domain(v, f)
    aniso = make_grid_domain(8, 8)
    cfg = HeatKernelConfig(gamma=2.0)
    return {
        "grid": heat_kernel(grid_laplacian(grid), cfg),
        "mesh": heat_kernel(cotangent_laplacian(mesh), HeatKernelConfig(gamma=0.3)),
        "aniso": heat_kernel(anisotropic_laplacian(aniso, AnisotropyField.circular(aniso, 3.0)), cfg),
        "gauss": gaussian_grid_kernel(make_grid_domain(16, 16), 3.0),
    }


@pytest.mark.parametrize("name", ["grid", "mesh", "aniso"])
def test_heat_mass_preserved(name):
    k = kernels_under_test()[name]
    v = np.random.default_rng(7).random(k.n)
    assert abs(k.apply(v).sum() - v.sum()) <= 1e-10


@pytest.mark.parametrize("name", ["grid", "mesh", "aniso", "gauss"])
def test_kernel_positivity_linearity_symmetry(name):
    k = kernels_under_test()[name]
    rng = np.random.default_rng(11)
    u, v = rng.random(k.n), rng.random(k.n)
    e = np.zeros(k.n)
    e[k.n // 3] = 1.0
    assert np.all(k.apply(e) > 0)
    assert np.max(np.abs(k.apply(2 * u - 3 * v) - (2 * k.apply(u) - 3 * k.apply(v)))) <= 1e-12
    assert k.symmetric
    dense = k.dense()
    assert np.max(np.abs(dense - dense.T)) <= 1e-12
    assert np.max(np.abs(k.apply_transpose(u) - k.apply(u))) <= 1e-12


def test_direct_and_cg_agree():
    d = l_shape(10)
    lap = grid_laplacian(d)
    v = np.random.default_rng(1).random(d.n)
    direct = heat_kernel(lap, HeatKernelConfig(2.0)).apply(v)
    cg = heat_kernel(lap, HeatKernelConfig(2.0, solver="cg")).apply(v)
    assert np.max(np.abs(direct - cg)) <= 1e-8 * np.max(np.abs(direct))


def test_heat_dirac_profile_is_radially_decreasing():
    d = make_grid_domain(65, 65)
    k = heat_kernel(grid_laplacian(d), HeatKernelConfig(gamma=40.0, L=40))
    e = np.zeros(d.n)
    e[d.index[32, 32]] = 1.0
    img = d.to_image(k.apply(e))
    row = img[32, 32:]
    assert np.all(np.diff(row) < 0)
    diag = np.array([img[32 + s, 32 + s] for s in range(33)])
    assert np.all(np.diff(diag) < 0)


def test_laplacian_for_dispatch():
    v, f = icosahedron()
    assert laplacian_for(mesh_domain(v, f)).shape == (12, 12)
    assert laplacian_for(make_grid_domain(3, 3)).shape == (9, 9)
