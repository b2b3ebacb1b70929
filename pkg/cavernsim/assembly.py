"""
Global sparse stiffness, creep fictitious forces, roller constraints and element field
recovery for constant-strain triangles under plane strain.

Creep strain is stored per element as (M, 4) columns (exx, eyy, gxy, ezz) with
engineering shear.
"""

import logging
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .constitutive import StrainState, StressState, plane_strain_stress, von_mises
from .errors import AssemblyError, SingularSystemError
from .materials import ElementProperties, Material, element_properties
from .mesh import BoundaryTag, Mesh, cst_gradients

logger = logging.getLogger(__name__)

Materials = Union[Mapping[str, Material], ElementProperties]


def _resolve(mesh: Mesh, materials: Materials) -> ElementProperties:
    if isinstance(materials, ElementProperties):
        return materials
    return element_properties(mesh, materials)


def element_kinematics(mesh: Mesh, u: Optional[np.ndarray] = None):
    """Areas and B operators, on the deformed coordinates x + u when u is given."""
    coords = mesh.element_coordinates
    if u is not None:
        coords = coords + np.asarray(u).reshape(-1, 2)[mesh.elements]
    return cst_gradients(coords)


@dataclass
class GlobalSystem:
    K: sparse.csr_matrix
    F: np.ndarray
    fixed_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    fixed_values: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class ConstrainedSystem:
    """Free-dof block K_ff u_f = F_f of an eliminated system."""

    K: sparse.csc_matrix
    F: np.ndarray
    free: np.ndarray
    fixed: np.ndarray
    values: np.ndarray
    n_dofs: int

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        u = np.zeros(self.n_dofs)
        u[self.free] = u_free
        u[self.fixed] = self.values
        return u


def element_stiffness(B: np.ndarray, C: np.ndarray, areas: np.ndarray) -> np.ndarray:
    """(M, 6, 6) element matrices B^T C B * area, exact for one-point quadrature."""
    return np.einsum("mki,mkl,mlj->mij", B, C, B) * areas[:, None, None]


def assemble_stiffness(
    mesh: Mesh,
    materials: Materials,
    u: Optional[np.ndarray] = None,
) -> sparse.csr_matrix:
    """
    Global stiffness K = sum_e B_e^T C_e B_e A_e.

    Args:
        mesh (Mesh): the mesh
        materials: catalog mapping or resolved ElementProperties
        u (np.ndarray, optional): displacement defining deformed coordinates

    Returns:
        sparse.csr_matrix: symmetric (2N, 2N) stiffness
    """
    props = _resolve(mesh, materials)
    areas, B = element_kinematics(mesh, u)
    Ke = element_stiffness(B, props.C, areas)
    dofs = mesh.dofs
    rows = np.broadcast_to(dofs[:, :, None], Ke.shape)
    cols = np.broadcast_to(dofs[:, None, :], Ke.shape)
    K = sparse.coo_matrix(
        (Ke.ravel(), (rows.ravel(), cols.ravel())), shape=(mesh.n_dofs, mesh.n_dofs)
    ).tocsr()
    K.sum_duplicates()
    return K


def creep_stress(props: ElementProperties, eps_cr: np.ndarray) -> np.ndarray:
    """In-plane stress C eps_cr + lambda * eps_cr_zz * (1, 1, 0) removed by creep."""
    eps_cr = np.asarray(eps_cr, dtype=float)
    sigma = np.einsum("mij,mj->mi", props.C, eps_cr[:, :3])
    sigma[:, :2] += (props.lam * eps_cr[:, 3])[:, None]
    return sigma


def assemble_creep_forces(
    mesh: Mesh,
    eps_cr: np.ndarray,
    materials: Materials,
    u: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Fictitious creep forces F_cr = sum_e B_e^T (C_e eps_cr,e + lambda eps_cr,zz m) A_e.

    Args:
        mesh (Mesh): the mesh
        eps_cr (np.ndarray): (M, 4) creep strain (exx, eyy, gxy, ezz)
        materials: catalog mapping or resolved ElementProperties

    Returns:
        np.ndarray: global force vector (2N)
    """
    eps_cr = np.asarray(eps_cr, dtype=float)
    if eps_cr.shape != (mesh.n_elements, 4):
        raise AssemblyError(f"creep strain must have shape ({mesh.n_elements}, 4), got {eps_cr.shape}")
    props = _resolve(mesh, materials)
    areas, B = element_kinematics(mesh, u)
    fe = np.einsum("mki,mk->mi", B, creep_stress(props, eps_cr)) * areas[:, None]
    return np.bincount(mesh.dofs.ravel(), weights=fe.ravel(), minlength=mesh.n_dofs)


def rigid_body_modes(mesh: Mesh) -> np.ndarray:
    """(2N, 3) translations in x, y and the infinitesimal rotation about the centroid."""
    centre = mesh.nodes.mean(axis=0)
    rel = mesh.nodes - centre
    modes = np.zeros((mesh.n_dofs, 3))
    modes[0::2, 0] = 1.0
    modes[1::2, 1] = 1.0
    modes[0::2, 2] = -rel[:, 1]
    modes[1::2, 2] = rel[:, 0]
    return modes


def roller_dofs(mesh: Mesh) -> np.ndarray:
    """Bottom nodes fix u_y, SymmetryAxis nodes fix u_x."""
    bottom = mesh.nodes_with_tag(BoundaryTag.BOTTOM)
    axis = mesh.nodes_with_tag(BoundaryTag.SYMMETRY_AXIS)
    return np.unique(np.concatenate([2 * axis, 2 * bottom + 1]).astype(np.int64))


def apply_constraints(system: GlobalSystem, mesh: Mesh) -> ConstrainedSystem:
    """
    Eliminate roller and prescribed degrees of freedom symmetrically.

    Raises:
        SingularSystemError: the constraints leave a rigid-body mode free
    """
    rollers = roller_dofs(mesh)
    fixed = np.unique(np.concatenate([rollers, np.asarray(system.fixed_dofs, dtype=np.int64)]))
    values = np.zeros(mesh.n_dofs)
    values[np.asarray(system.fixed_dofs, dtype=np.int64)] = system.fixed_values
    values = values[fixed]

    modes = rigid_body_modes(mesh)[fixed]
    scale = max(1.0, float(np.abs(mesh.nodes).max()))
    rank = np.linalg.matrix_rank(modes / np.array([1.0, 1.0, scale]), tol=1e-9) if len(fixed) else 0
    if rank < 3:
        raise SingularSystemError(
            f"constraints leave {3 - rank} rigid-body mode(s) free ({len(fixed)} fixed dofs)"
        )

    free = np.setdiff1d(np.arange(mesh.n_dofs), fixed)
    K = system.K.tocsr()
    K_ff = K[free][:, free].tocsc()
    F_f = np.asarray(system.F, dtype=float)[free] - K[free][:, fixed] @ values
    logger.debug("constraints fixed=%d free=%d", len(fixed), len(free))
    return ConstrainedSystem(K_ff, F_f, free, fixed, values, mesh.n_dofs)


def is_positive_definite(K: sparse.spmatrix) -> bool:
    """SPD test through a diagonal-pivot symmetric-mode LU (all pivots positive)."""
    K = sparse.csc_matrix(K)
    if K.shape[0] == 0:
        return True
    if abs(K - K.T).max() > 1e-9 * abs(K).max():
        return False
    try:
        lu = splu(
            K,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError:
        return False
    return bool(np.all(lu.U.diagonal() > 0))


class FieldRecovery(NamedTuple):
    strain: StrainState
    stress: StressState
    von_mises: np.ndarray
    elastic_zz: np.ndarray


def recover_fields(
    mesh: Mesh,
    u: np.ndarray,
    eps_cr: np.ndarray,
    materials: Materials,
    geometry_u: Optional[np.ndarray] = None,
) -> FieldRecovery:
    """
    Element strain, stress and von Mises stress.

    Total strain is B u; stress follows from the elastic part eps - eps_cr with the
    out-of-plane elastic strain -eps_cr,zz.

    Args:
        mesh (Mesh): the mesh
        u (np.ndarray): nodal displacement (2N)
        eps_cr (np.ndarray): (M, 4) creep strain
        materials: catalog mapping or resolved ElementProperties
        geometry_u (np.ndarray, optional): displacement of the configuration B is built on

    Returns:
        FieldRecovery: per-element StrainState, StressState, von Mises and elastic ezz
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_dofs,):
        raise AssemblyError(f"displacement must have {mesh.n_dofs} entries, got {u.shape}")
    props = _resolve(mesh, materials)
    _, B = element_kinematics(mesh, geometry_u)
    eps = np.einsum("mij,mj->mi", B, u[mesh.dofs])
    eps_cr = np.asarray(eps_cr, dtype=float)
    elastic = eps - eps_cr[:, :3]
    ezz = -eps_cr[:, 3]
    stress = plane_strain_stress(props.lam, props.mu, elastic[:, 0], elastic[:, 1], elastic[:, 2], ezz)
    strain = StrainState(eps[:, 0], eps[:, 1], eps[:, 2])
    return FieldRecovery(strain, stress, von_mises(stress), ezz)
