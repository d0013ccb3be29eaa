import math

import numpy as np
import pytest

from febe import fem, material as mat
from febe.mesh import Mesh, load_mesh, refine_uniform
from febe.quadrature import QuadratureRule

from conftest import square_mesh_text


def ref_triangle():
    return Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                np.array([[0, 1, 2]]),
                np.array([[0, 1], [1, 2], [2, 0]]), ["T", "T", "T"])


def exact_moment(a, b):
    # int over reference triangle of x^a y^b
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


@pytest.mark.parametrize("order", [1, 2, 4, 5, 6])
def test_quadrature_exactness(order):
    rule = QuadratureRule(order)
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(1.0)
    for a in range(order + 1):
        for b in range(order + 1 - a):
            x = rule.bary[:, 1]
            y = rule.bary[:, 2]
            got = 0.5 * np.sum(rule.weights * x ** a * y ** b)
            assert got == pytest.approx(exact_moment(a, b), rel=1e-12, abs=1e-15)


def test_residual_zero_field(unit_square):
    space = fem.FESpace(unit_square, ncomp=2)
    law = mat.MaterialLaw(p=3.0, mode=mat.MODE_MATRIX)
    R = fem.assemble_residual(space, law, np.zeros(space.ndof))
    assert np.all(R == 0.0)


def test_residual_rigid_translation(unit_square):
    space = fem.FESpace(unit_square, ncomp=2)
    law = mat.MaterialLaw(p=2.0, mode=mat.MODE_MATRIX)
    u = np.tile([0.7, -0.3], len(unit_square.vertices))
    R = fem.assemble_residual(space, law, u)
    assert np.linalg.norm(R) < 1e-14


def test_residual_constant_strain_single_triangle():
    m = ref_triangle()
    space = fem.FESpace(m, ncomp=2)
    law = mat.MaterialLaw(p=3.0, mode=mat.MODE_MATRIX)
    # u = (x, 0): strain = [[1,0],[0,0]], |strain| = 1 -> stress = strain
    u = np.zeros(space.ndof)
    u[2] = 1.0  # vertex 1, x-component: u_x = x
    eps = np.array([[1.0, 0.0], [0.0, 0.0]])
    sig = mat.stress(law, eps)
    R = fem.assemble_residual(space, law, u)
    g = space.grads[0]
    area = 0.5
    for k in range(3):
        for c in range(2):
            e = np.zeros(2); e[c] = 1
            beps = 0.5 * (np.outer(e, g[k]) + np.outer(g[k], e))
            assert R[2 * k + c] == pytest.approx(area * np.sum(sig * beps))


def test_residual_quad_order_validation(unit_square):
    space = fem.FESpace(unit_square)
    law = mat.MaterialLaw(p=2.0)
    with pytest.raises(ValueError):
        fem.assemble_residual(space, law, np.zeros(space.ndof), quad_order=1)


def test_tangent_directional_derivative(unit_square):
    m = refine_uniform(unit_square, 2)
    space = fem.FESpace(m, ncomp=2)
    law = mat.MaterialLaw(p=3.0, mode=mat.MODE_MATRIX)
    rng = np.random.default_rng(0)
    u = rng.normal(size=space.ndof)
    w = rng.normal(size=space.ndof)
    M = fem.assemble_tangent(space, law, u)
    errs = []
    for t in (1e-4, 1e-5, 1e-6):
        fd = (fem.assemble_residual(space, law, u + t * w)
              - fem.assemble_residual(space, law, u - t * w)) / (2 * t)
        errs.append(np.linalg.norm(fd - M @ w))
    assert errs[-1] <= 1e-6 * max(1.0, np.linalg.norm(M @ w))


def test_tangent_p2_independent_of_state(unit_square):
    space = fem.FESpace(unit_square, ncomp=2)
    law = mat.MaterialLaw(p=2.0, mode=mat.MODE_MATRIX)
    rng = np.random.default_rng(1)
    A = fem.assemble_tangent(space, law, rng.normal(size=space.ndof))
    B = fem.assemble_tangent(space, law, rng.normal(size=space.ndof))
    assert np.allclose(A.toarray(), B.toarray(), atol=1e-13)


def test_tangent_kernel_rigid_rotation(unit_square):
    space = fem.FESpace(unit_square, ncomp=2)
    law = mat.MaterialLaw(p=2.0, mode=mat.MODE_MATRIX)
    A = fem.assemble_tangent(space, law, np.zeros(space.ndof))
    rot = np.column_stack([-space.mesh.vertices[:, 1],
                           space.mesh.vertices[:, 0]]).ravel()
    assert np.linalg.norm(A @ rot) < 1e-12


def test_load_zero(unit_square):
    space = fem.FESpace(unit_square)
    L = fem.assemble_load(space, lambda x: np.zeros(len(x)))
    assert np.all(L == 0.0)


def test_load_partition_of_unity(unit_square):
    space = fem.FESpace(unit_square)
    c = 2.5
    L = fem.assemble_load(space, lambda x: np.full(len(x), c))
    assert L.sum() == pytest.approx(c * 1.0)
    space2 = fem.FESpace(unit_square, ncomp=2)
    L2 = fem.assemble_load(space2, lambda x: np.tile([c, -c], (len(x), 1)))
    assert L2[0::2].sum() == pytest.approx(c)
    assert L2[1::2].sum() == pytest.approx(-c)


def test_load_reference_triangle_moments():
    # f = (x, 0); frozen values from the exact monomial moments
    m = ref_triangle()
    space = fem.FESpace(m, ncomp=2)
    L = fem.assemble_load(space, lambda x: np.column_stack([x[:, 0], 0 * x[:, 0]]))
    # int x*(1-x-y) = 1/24, int x*x = 1/12, int x*y = 1/24
    assert L[0] == pytest.approx(1 / 24, rel=1e-12)
    assert L[2] == pytest.approx(1 / 12, rel=1e-12)
    assert L[4] == pytest.approx(1 / 24, rel=1e-12)
    assert L[1::2] == pytest.approx(np.zeros(3), abs=1e-15)


def test_norms_zero(unit_square):
    space = fem.FESpace(unit_square)
    w, e, tr = fem.norms(space, np.zeros(space.ndof), p=2.0)
    assert (w, e, tr) == (0.0, 0.0, 0.0)


def test_norms_linear_field(unit_square):
    # vector u = (x, x): grad = [[1,0],[1,0]], eps = [[1,.5],[.5,0]]
    space = fem.FESpace(unit_square, ncomp=2)
    u = np.repeat(unit_square.vertices[:, 0], 2)
    w1p, epsn, tr = fem.norms(space, u, p=2.0)
    assert epsn == pytest.approx(np.sqrt(1.5), rel=1e-12)
    # |u|^2 = 2x^2 on the square: integral 2/3; |grad|^2 = 2
    assert w1p == pytest.approx(np.sqrt(2 / 3 + 2), rel=1e-10)
    # trace: |u| = sqrt(2)|x| over the 4 unit sides: bottom+top = 2*sqrt(2)/2, left 0, right sqrt(2)
    assert tr == pytest.approx(np.sqrt(2) * (0.5 + 0.5 + 0 + 1), rel=1e-10)


def test_energy_gradient_is_residual(unit_square):
    m = refine_uniform(unit_square, 1)
    space = fem.FESpace(m, ncomp=2)
    rng = np.random.default_rng(4)
    for law in (mat.MaterialLaw(p=3.0, mode=mat.MODE_MATRIX),
                mat.MaterialLaw(p=1.5, kind=mat.CARREAU, delta=0.5, mode=mat.MODE_MATRIX)):
        u = rng.normal(size=space.ndof)
        w = rng.normal(size=space.ndof)
        R = fem.assemble_residual(space, law, u)
        t = 1e-6
        fd = (fem.energy(space, law, u + t * w) - fem.energy(space, law, u - t * w)) / (2 * t)
        assert fd == pytest.approx(float(R @ w), rel=2e-5)


def test_residual_monotone(unit_square):
    space = fem.FESpace(unit_square, ncomp=2)
    law = mat.MaterialLaw(p=1.5, mode=mat.MODE_MATRIX)
    rng = np.random.default_rng(6)
    for _ in range(25):
        u, v = rng.normal(size=space.ndof), rng.normal(size=space.ndof)
        Ru = fem.assemble_residual(space, law, u)
        Rv = fem.assemble_residual(space, law, v)
        assert (Ru - Rv) @ (u - v) >= -1e-12


def test_korn_constant_stable_under_refinement():
    m = load_mesh(square_mesh_text(left_label="S"), scale=False)
    rng = np.random.default_rng(9)
    consts = []
    for _ in range(4):
        space = fem.FESpace(m, ncomp=2)
        cs = []
        for _ in range(50):
            u = rng.normal(size=space.ndof)
            w1p, epsn, _ = fem.norms(space, u, p=2.0)
            tr_t = fem.boundary_trace_l1(space, u, labels=("T",))
            cs.append(w1p / (epsn + tr_t))
        consts.append(max(cs))
        m = refine_uniform(m, 1)
    assert max(consts) <= 2.0 * min(consts)
