import numpy as np
import pytest
from scipy import sparse

from cavernsim.assembly import (
    GlobalSystem,
    apply_constraints,
    assemble_creep_forces,
    assemble_stiffness,
    is_positive_definite,
    recover_fields,
    rigid_body_modes,
    roller_dofs,
)
from cavernsim.constitutive import plane_strain_stress
from cavernsim.errors import AssemblyError, SingularSystemError
from cavernsim.mesh import BoundaryTag
from cavernsim.meshgen import generate_rectangle
from cavernsim.solver import LinearSolver, solve_linear


def test_stiffness_is_symmetric(square, catalog):
    K = assemble_stiffness(square, catalog)
    assert K.shape == (square.n_dofs, square.n_dofs)
    assert abs(K - K.T).max() <= 1e-9 * abs(K).max()


def test_rigid_body_modes_carry_no_energy(square, catalog):
    K = assemble_stiffness(square, catalog)
    residual = K @ rigid_body_modes(square)
    assert np.abs(residual).max() <= 1e-9 * abs(K).max()


def test_constrained_stiffness_is_positive_definite(square, catalog):
    K = assemble_stiffness(square, catalog)
    constrained = apply_constraints(GlobalSystem(K, np.zeros(square.n_dofs)), square)
    assert is_positive_definite(constrained.K)


def test_positive_definite_check():
    assert is_positive_definite(sparse.identity(4, format="csc"))
    assert not is_positive_definite(-sparse.identity(4, format="csc"))


def test_rollers_fix_axis_x_and_bottom_y(square):
    dofs = roller_dofs(square)
    axis = square.nodes_with_tag(BoundaryTag.SYMMETRY_AXIS)
    bottom = square.nodes_with_tag(BoundaryTag.BOTTOM)
    assert set(dofs) == set(2 * axis) | set(2 * bottom + 1)


def test_missing_rollers_leave_rigid_modes(catalog):
    mesh = generate_rectangle(
        1.0, 1.0, 2, 2, left=BoundaryTag.FAR_FIELD, bottom=BoundaryTag.TOP
    )
    K = assemble_stiffness(mesh, catalog)
    with pytest.raises(SingularSystemError):
        apply_constraints(GlobalSystem(K, np.zeros(mesh.n_dofs)), mesh)


def test_patch_test_reproduces_linear_displacement(catalog, linear_field):
    field, expected = linear_field
    mesh = generate_rectangle(3.0, 2.0, 3, 3)
    exact = field(mesh.nodes)
    boundary = np.unique(mesh.boundary.ravel())
    fixed = np.sort(np.concatenate([2 * boundary, 2 * boundary + 1]))
    K = assemble_stiffness(mesh, catalog)
    u = LinearSolver(K, fixed_dofs=fixed, fixed_values=exact[fixed]).solve(np.zeros(mesh.n_dofs))
    np.testing.assert_allclose(u, exact, rtol=1e-9, atol=1e-12)

    fields = recover_fields(mesh, u, np.zeros((mesh.n_elements, 4)), catalog)
    np.testing.assert_allclose(fields.strain.exx, expected[0], rtol=1e-9)
    np.testing.assert_allclose(fields.strain.eyy, expected[1], rtol=1e-9)
    np.testing.assert_allclose(fields.strain.gxy, expected[2], rtol=1e-9)
    stress = plane_strain_stress(14e9, 14e9, *expected)
    np.testing.assert_allclose(fields.stress.syy, stress.syy, rtol=1e-9)
    np.testing.assert_allclose(fields.stress.szz, stress.szz, rtol=1e-9)


def test_uniform_creep_strain_acts_like_the_matching_displacement(square, catalog):
    e = 2e-4
    eps_cr = np.zeros((square.n_elements, 4))
    eps_cr[:, 0] = e
    u = np.zeros(square.n_dofs)
    u[0::2] = e * square.nodes[:, 0]
    K = assemble_stiffness(square, catalog)
    forces = assemble_creep_forces(square, eps_cr, catalog)
    np.testing.assert_allclose(forces, K @ u, atol=1e-9 * np.abs(forces).max())

    # free expansion on rollers: the creep strain is taken up without stress
    solved = LinearSolver(K, square).solve(forces)
    fields = recover_fields(square, solved, eps_cr, catalog)
    assert np.abs(fields.von_mises).max() <= 1e-6 * 14e9 * e


def test_creep_strain_shape_is_checked(square, catalog):
    with pytest.raises(AssemblyError):
        assemble_creep_forces(square, np.zeros((square.n_elements, 3)), catalog)
    with pytest.raises(AssemblyError):
        recover_fields(square, np.zeros(3), np.zeros((square.n_elements, 4)), catalog)


def test_solve_linear_with_mesh_rollers(catalog):
    mesh = generate_rectangle(1.0, 2.0, 2, 4)
    K = assemble_stiffness(mesh, catalog)
    top = mesh.nodes_with_tag(BoundaryTag.TOP)
    F = np.zeros(mesh.n_dofs)
    # uniform 1 MPa compression spread over the top nodes by tributary width
    F[2 * top + 1] = -1e6 * np.array([0.25, 0.5, 0.25])[np.argsort(np.argsort(mesh.nodes[top, 0]))]
    u = solve_linear(GlobalSystem(K, F), mesh)
    fields = recover_fields(mesh, u, np.zeros((mesh.n_elements, 4)), catalog)
    np.testing.assert_allclose(fields.stress.syy, -1e6, rtol=1e-8)
    np.testing.assert_allclose(fields.stress.sxx, 0.0, atol=1e-3)
    np.testing.assert_allclose(fields.stress.szz, -0.25e6, rtol=1e-8)
