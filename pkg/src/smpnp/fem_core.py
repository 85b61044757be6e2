"""P1 Lagrange finite element machinery on tetrahedral meshes.

All assembly routines accept either the box mesh or the solvent submesh
(anything exposing ``vertices`` and ``tets``).  Stiffness and mass use the
exact closed-form P1 element integrals; general volume loads go through the
P1 mass matrix, which integrates P1*P1 products exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import MeshError


@dataclass
class DirichletSet:
    """Constrained node indices with their boundary values."""

    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        if self.nodes.size != np.unique(self.nodes).size:
            raise MeshError("Dirichlet node indices must be unique")
        if self.values.shape != self.nodes.shape:
            raise MeshError("Dirichlet values/nodes length mismatch")

    @staticmethod
    def empty():
        return DirichletSet(np.empty(0, dtype=np.int64), np.empty(0))


def p1_gradients(mesh):
    """Per-tet constant gradients of the 4 barycentric basis functions.

    Returns (grads, volumes): grads has shape (M, 4, 3).  Raises on
    non-positive tet volume.
    """
    p = mesh.vertices[mesh.tets]
    jac = p[:, 1:] - p[:, :1]  # rows: edge vectors
    det = np.linalg.det(jac)
    if np.any(det <= 0.0):
        raise MeshError("inverted element %d" % int(np.argmax(det <= 0.0)))
    inv = np.linalg.inv(jac)
    grads = np.empty((len(det), 4, 3))
    grads[:, 1:] = np.transpose(inv, (0, 2, 1))
    grads[:, 0] = -grads[:, 1:].sum(axis=1)
    return grads, det / 6.0


def _tet_weight(mesh, weight, n_tets):
    """Normalize a scalar / per-tet / per-node weight to one value per tet."""
    if weight is None:
        return np.ones(n_tets)
    weight = np.asarray(weight, dtype=float)
    if weight.ndim == 0:
        return np.full(n_tets, float(weight))
    if weight.shape == (n_tets,):
        return weight
    if weight.shape == (mesh.vertices.shape[0],):
        return weight[mesh.tets].mean(axis=1)  # vertex mean per tet
    raise MeshError("weight shape %s matches neither tets nor nodes" % (weight.shape,))


def assemble_weighted_stiffness(mesh, weight=None, tet_mask=None):
    """CSR stiffness matrix sum_T w_T int_T grad(phi_a).grad(phi_b).

    ``weight`` may be a scalar, per-tet array, or per-node array (averaged
    over each tet's 4 vertices).  ``tet_mask`` restricts assembly to a tet
    subset.  The unconstrained operator annihilates constants.
    """
    grads, vols = p1_gradients(mesh)
    tets = mesh.tets
    w = _tet_weight(mesh, weight, len(tets))
    if not np.all(np.isfinite(w)):
        raise MeshError("non-finite stiffness weight")
    if tet_mask is not None:
        grads, vols, tets, w = grads[tet_mask], vols[tet_mask], tets[tet_mask], w[tet_mask]
    ke = np.einsum("t,taj,tbj->tab", w * vols, grads, grads)
    n = mesh.vertices.shape[0]
    rows = np.repeat(tets, 4, axis=1).ravel()
    cols = np.tile(tets, (1, 4)).ravel()
    A = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def assemble_mass(mesh, tet_mask=None, weight=None):
    """CSR P1 mass matrix int w phi_a phi_b (exact closed form)."""
    _, vols = p1_gradients(mesh)
    tets = mesh.tets
    w = _tet_weight(mesh, weight, len(tets))
    if tet_mask is not None:
        vols, tets, w = vols[tet_mask], tets[tet_mask], w[tet_mask]
    local = (np.ones((4, 4)) + np.eye(4)) / 20.0
    me = (w * vols)[:, None, None] * local
    n = mesh.vertices.shape[0]
    rows = np.repeat(tets, 4, axis=1).ravel()
    cols = np.tile(tets, (1, 4)).ravel()
    M = sp.coo_matrix((me.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    M.sum_duplicates()
    M.sort_indices()
    return M


def assemble_load_volume(mesh, density, tet_mask=None, dirichlet=None):
    """Load vector int density phi_a over the (masked) tets.

    ``density`` is nodal; the P1*P1 product is integrated exactly through
    the element mass matrix.  Rows of ``dirichlet`` nodes are zeroed when a
    set is supplied (test space with essential constraints).
    """
    density = np.asarray(density, dtype=float)
    out = assemble_mass(mesh, tet_mask=tet_mask) @ density
    if dirichlet is not None and dirichlet.nodes.size:
        out[dirichlet.nodes] = 0.0
    return out


def triangle_areas_normals(mesh, facets):
    """Areas and unit normals (unoriented) of the given triangles."""
    p = mesh.vertices[facets]
    cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    nrm = np.linalg.norm(cr, axis=1)
    return 0.5 * nrm, cr / nrm[:, None]


def assemble_surface_load(mesh, label, density=1.0):
    """Load vector int_{facets with label} density phi_a dS.

    ``density`` is a scalar or per-facet array; exact for P1 test functions
    against facetwise-constant data (area/3 to each corner node).
    """
    labels = mesh.facet_labels
    facets = mesh.facets[labels == label]
    if facets.shape[0] == 0:
        raise MeshError("no facets carry label %s" % label)
    areas, _ = triangle_areas_normals(mesh, facets)
    dens = np.broadcast_to(np.asarray(density, dtype=float), areas.shape)
    n = mesh.vertices.shape[0]
    out = np.zeros(n)
    np.add.at(out, facets.ravel(), np.repeat(dens * areas / 3.0, 3))
    return out


def assemble_surface_load_nodal(mesh, facets, values):
    """Load vector int f phi_a dS for P1 surface data given at facet corners.

    ``values`` has shape (K, 3), one value per corner of each facet; uses
    the exact P1xP1 triangle integral area/12 * (2 f_a + f_b + f_c).
    """
    areas, _ = triangle_areas_normals(mesh, facets)
    coef = (values + values.sum(axis=1, keepdims=True)) * (areas / 12.0)[:, None]
    n = mesh.vertices.shape[0]
    out = np.zeros(n)
    np.add.at(out, facets.ravel(), coef.ravel())
    return out


def apply_dirichlet(A, b, d: DirichletSet):
    """Return (A', b') with constrained dofs eliminated symmetrically.

    Constrained rows/columns become identity; known values move to the
    right-hand side of the free rows.
    """
    if d.nodes.size == 0:
        return A.tocsr(), np.asarray(b, dtype=float).copy()
    n = A.shape[0]
    b2 = np.asarray(b, dtype=float).copy()
    g = np.zeros(n)
    g[d.nodes] = d.values
    b2 -= A @ g
    keep = np.ones(n)
    keep[d.nodes] = 0.0
    D = sp.diags(keep)
    pin = sp.diags(1.0 - keep)
    A2 = (D @ A @ D + pin).tocsr()
    A2.sum_duplicates()
    A2.sort_indices()
    b2[d.nodes] = d.values
    return A2, b2


def l2_norm(mesh, f, mass=None):
    """L2 norm sqrt(int f^2) with the exact P1 mass matrix."""
    f = np.asarray(f, dtype=float)
    if f.shape[0] != mesh.vertices.shape[0]:
        raise MeshError("field length does not match mesh")
    if mass is None:
        mass = assemble_mass(mesh)
    return float(np.sqrt(max(f @ (mass @ f), 0.0)))


def l2_diff(mesh, f, g, mass=None):
    """L2 norm of f - g on a common mesh."""
    f, g = np.asarray(f, dtype=float), np.asarray(g, dtype=float)
    if f.shape != g.shape:
        raise MeshError("field shapes differ")
    return l2_norm(mesh, f - g, mass=mass)


def dirichlet_nodes(mesh, label):
    """Unique node indices of facets carrying ``label``."""
    return np.unique(mesh.facets[mesh.facet_labels == label])
