"""Labeled tetrahedral meshes of the box domain, the solvent submesh, and
the restriction/prolongation maps between the two P1 spaces.

Regions: 1 = Solvent, 2 = Protein, 3 = Membrane.
Facet labels: 1 = protein-solvent, 2 = membrane-solvent, 3 = protein-membrane
interfaces; 4 = Dirichlet (bottom/top box faces); 5 = Neumann (side faces).
On the solvent submesh the two solvent-facing interface labels collapse to 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MeshError, MeshFormatError

SOLVENT, PROTEIN, MEMBRANE = 1, 2, 3
GAMMA_P, GAMMA_M, GAMMA_PM, GAMMA_D, GAMMA_N = 1, 2, 3, 4, 5
#: Submesh facet labels: solvent-facing interface, Dirichlet, Neumann.
SUB_INTERFACE, SUB_DIRICHLET, SUB_NEUMANN = 1, GAMMA_D, GAMMA_N

_REGIONS = (SOLVENT, PROTEIN, MEMBRANE)
_FACET_LABELS = (GAMMA_P, GAMMA_M, GAMMA_PM, GAMMA_D, GAMMA_N)

_GEOM_TOL = 1.0e-9


def tet_volumes(vertices, tets):
    """Signed volumes of the given tets."""
    p = vertices[tets]
    return np.linalg.det(p[:, 1:] - p[:, :1]) / 6.0


@dataclass
class LabeledMesh:
    """Tetrahedral mesh of the box with region and facet labels.

    ``box`` is (x1, x2, y1, y2, z1, z2) in A; ``z1``/``z2`` are the membrane
    plane heights.  Immutable by convention after construction/validation.
    """

    vertices: np.ndarray  # (N, 3) float
    tets: np.ndarray  # (M, 4) int
    tet_regions: np.ndarray  # (M,) int
    facets: np.ndarray  # (K, 3) int
    facet_labels: np.ndarray  # (K,) int
    box: tuple
    z1: float
    z2: float

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_tets(self):
        return self.tets.shape[0]

    def validate(self):
        """Check every LabeledMesh invariant; raise MeshError on failure."""
        vols = tet_volumes(self.vertices, self.tets)
        bad = np.nonzero(vols <= 0.0)[0]
        if bad.size:
            raise MeshError("inverted tet index %d (signed volume %.3e)" % (bad[0], vols[bad[0]]))
        unknown = set(np.unique(self.tet_regions)) - set(_REGIONS)
        if unknown:
            raise MeshError("unknown region tag %s" % sorted(unknown)[0])
        unknown = set(np.unique(self.facet_labels)) - set(_FACET_LABELS)
        if unknown:
            raise MeshError("unknown facet label %s" % sorted(unknown)[0])
        x1, x2, y1, y2, z1, z2 = self.box
        for k in np.nonzero(self.facet_labels == GAMMA_D)[0]:
            zc = self.vertices[self.facets[k], 2]
            if not (np.all(np.abs(zc - z1) < _GEOM_TOL) or np.all(np.abs(zc - z2) < _GEOM_TOL)):
                raise MeshError("Dirichlet facet %d not on z=L_z1 or z=L_z2" % k)
        for k in np.nonzero(self.facet_labels == GAMMA_N)[0]:
            pts = self.vertices[self.facets[k]]
            on_side = any(
                np.all(np.abs(pts[:, axis] - val) < _GEOM_TOL)
                for axis, val in ((0, x1), (0, x2), (1, y1), (1, y2))
            )
            if not on_side:
                raise MeshError("Neumann facet %d not on a side plane" % k)
        self._validate_interface_facets()
        return self

    def _validate_interface_facets(self):
        expect = {GAMMA_P: {SOLVENT, PROTEIN}, GAMMA_M: {SOLVENT, MEMBRANE},
                  GAMMA_PM: {PROTEIN, MEMBRANE}}
        face_owner = _face_table(self.tets)
        for k, (f, lab) in enumerate(zip(self.facets, self.facet_labels)):
            if lab not in expect:
                continue
            owners = face_owner.get(tuple(sorted(f)), ())
            regions = {int(self.tet_regions[t]) for t in owners}
            if len(owners) != 2 or regions != expect[lab]:
                raise MeshError("facet %d does not separate the regions of label %d" % (k, lab))

    def region_volume(self, region):
        vols = tet_volumes(self.vertices, self.tets)
        return float(vols[self.tet_regions == region].sum())

    def dirichlet_side_nodes(self):
        """(bottom_nodes, top_nodes) on the Dirichlet facets, disjoint."""
        z1 = self.box[4]
        nodes = np.unique(self.facets[self.facet_labels == GAMMA_D])
        on_bottom = np.abs(self.vertices[nodes, 2] - z1) < _GEOM_TOL
        return nodes[on_bottom], nodes[~on_bottom]


def _face_table(tets):
    """Map sorted face tuple -> list of owning tet indices."""
    faces = {}
    local = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))
    for t, tet in enumerate(tets):
        for a, b, c in local:
            key = tuple(sorted((tet[a], tet[b], tet[c])))
            faces.setdefault(key, []).append(t)
    return faces


# ---------------------------------------------------------------------------
# mesh file I/O (plain-text format, see README)

def load_mesh(path):
    """Read a labeled mesh from the plain-text format and validate it."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise MeshFormatError("unexpected end of file", line=len(lines))
        pos += 1
        return lines[pos - 1].split(), pos

    tok, ln = next_line()
    if tok != ["smpnp-mesh", "1"]:
        raise MeshFormatError("bad header, expected 'smpnp-mesh 1'", line=ln)
    tok, ln = next_line()
    if len(tok) != 2 or tok[0] != "vertices":
        raise MeshFormatError("expected 'vertices N'", line=ln)
    nv = int(tok[1])
    verts = np.empty((nv, 3))
    for i in range(nv):
        tok, ln = next_line()
        try:
            verts[i] = [float(x) for x in tok]
        except ValueError:
            raise MeshFormatError("bad vertex coordinates", line=ln)
        if len(tok) != 3:
            raise MeshFormatError("expected 3 coordinates", line=ln)
    tok, ln = next_line()
    if len(tok) != 2 or tok[0] != "tets":
        raise MeshFormatError("expected 'tets M'", line=ln)
    nt = int(tok[1])
    tets = np.empty((nt, 4), dtype=np.int64)
    regions = np.empty(nt, dtype=np.int64)
    for i in range(nt):
        tok, ln = next_line()
        if len(tok) != 5:
            raise MeshFormatError("expected 'i0 i1 i2 i3 region'", line=ln)
        vals = [int(x) for x in tok]
        if vals[4] not in _REGIONS:
            raise MeshFormatError("unknown region tag %d" % vals[4], line=ln)
        tets[i], regions[i] = vals[:4], vals[4]
    tok, ln = next_line()
    if len(tok) != 2 or tok[0] != "facets":
        raise MeshFormatError("expected 'facets K'", line=ln)
    nf = int(tok[1])
    facets = np.empty((nf, 3), dtype=np.int64)
    labels = np.empty(nf, dtype=np.int64)
    for i in range(nf):
        tok, ln = next_line()
        if len(tok) != 4:
            raise MeshFormatError("expected 'i0 i1 i2 label'", line=ln)
        vals = [int(x) for x in tok]
        if vals[3] not in _FACET_LABELS:
            raise MeshFormatError("unknown facet label %d" % vals[3], line=ln)
        facets[i], labels[i] = vals[:3], vals[3]
    # optional trailing metadata; absent -> box from vertex bounds,
    # membrane planes from the membrane tets (or box quartiles)
    try:
        tok, ln = next_line()
    except MeshFormatError:
        tok = None
    if tok is not None:
        if len(tok) != 9 or tok[0] != "box":
            raise MeshFormatError("expected 'box x1 x2 y1 y2 z1 z2 Z1 Z2'", line=ln)
        nums = [float(x) for x in tok[1:]]
        box, z1, z2 = tuple(nums[:6]), nums[6], nums[7]
    else:
        box = (verts[:, 0].min(), verts[:, 0].max(), verts[:, 1].min(),
               verts[:, 1].max(), verts[:, 2].min(), verts[:, 2].max())
        memb = regions == MEMBRANE
        if np.any(memb):
            zc = verts[np.unique(tets[memb]), 2]
            z1, z2 = float(zc.min()), float(zc.max())
        else:
            z1 = box[4] + 0.25 * (box[5] - box[4])
            z2 = box[4] + 0.75 * (box[5] - box[4])
    if np.any(tets >= nv) or np.any(tets < 0) or (nf and (np.any(facets >= nv) or np.any(facets < 0))):
        raise MeshFormatError("vertex index out of range")
    mesh = LabeledMesh(verts, tets, regions, facets, labels, box, z1, z2)
    return mesh.validate()


def save_mesh(mesh: LabeledMesh, path):
    """Write the canonical plain-text serialization of ``mesh``."""
    with open(path, "w") as fh:
        fh.write("smpnp-mesh 1\n")
        fh.write("vertices %d\n" % mesh.num_vertices)
        for p in mesh.vertices:
            fh.write("%.17g %.17g %.17g\n" % tuple(p))
        fh.write("tets %d\n" % mesh.num_tets)
        for tet, reg in zip(mesh.tets, mesh.tet_regions):
            fh.write("%d %d %d %d %d\n" % (tet[0], tet[1], tet[2], tet[3], reg))
        fh.write("facets %d\n" % len(mesh.facets))
        for f, lab in zip(mesh.facets, mesh.facet_labels):
            fh.write("%d %d %d %d\n" % (f[0], f[1], f[2], lab))
        fh.write("box %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n"
                 % (mesh.box + (mesh.z1, mesh.z2)))


# ---------------------------------------------------------------------------
# synthetic channel geometry

@dataclass(frozen=True)
class ChannelGeometry:
    """Structured-box stand-in for an interface-fitted channel mesh.

    A membrane slab fills z1 <= z <= z2 outside a cylindrical protein shell
    of radius ``shell_radius``; the shell interior outside the pore cylinder
    of radius ``pore_radius`` is protein; everything else is solvent.
    """

    box: tuple = (-20.0, 20.0, -20.0, 20.0, -30.0, 30.0)
    z1: float = -11.5
    z2: float = 11.5
    pore_radius: float = 6.0
    shell_radius: float = 14.0
    resolution: int = 12

    def __post_init__(self):
        x1, x2, y1, y2, zlo, zhi = self.box
        if not (zlo < self.z1 < self.z2 < zhi):
            raise MeshError("membrane planes must satisfy L_z1 < Z1 < Z2 < L_z2")
        if self.pore_radius > 0 and self.pore_radius >= self.shell_radius:
            raise MeshError("pore radius must be smaller than shell radius")
        if self.resolution < 2:
            raise MeshError("resolution must be at least 2 cells per direction")


def structured_box(box, n):
    """Vertices and tets of an n x n x n hex grid, each hex cut into 6 tets."""
    x1, x2, y1, y2, z1, z2 = box
    xs = np.linspace(x1, x2, n + 1)
    ys = np.linspace(y1, y2, n + 1)
    zs = np.linspace(z1, z2, n + 1)
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    # Kuhn split of the unit hex along the main diagonal (0,0,0)-(1,1,1):
    # all six tets share that diagonal and have positive volume.
    kuhn = [(0, 3, 1, 7), (0, 2, 3, 7), (0, 6, 2, 7),
            (0, 4, 6, 7), (0, 5, 4, 7), (0, 1, 5, 7)]
    tets = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                corners = [vid(i + a, j + b, k + c)
                           for a in (0, 1) for b in (0, 1) for c in (0, 1)]
                # corner order: (a,b,c) lexicographic -> index a*4+b*2+c
                for t in kuhn:
                    tets.append([corners[m] for m in t])
    return verts, np.asarray(tets, dtype=np.int64)


def _classify_region(geom: ChannelGeometry, centroid):
    x, y, z = centroid
    if not (geom.z1 <= z <= geom.z2):
        return SOLVENT
    r = np.hypot(x, y)
    if geom.shell_radius > 0 and r <= geom.shell_radius:
        if geom.pore_radius > 0 and r < geom.pore_radius:
            return SOLVENT
        return PROTEIN
    return MEMBRANE


def derive_facets(vertices, tets, regions, box):
    """Interface and boundary facet lists from tet adjacency."""
    x1, x2, y1, y2, z1, z2 = box
    pair_label = {frozenset((SOLVENT, PROTEIN)): GAMMA_P,
                  frozenset((SOLVENT, MEMBRANE)): GAMMA_M,
                  frozenset((PROTEIN, MEMBRANE)): GAMMA_PM}
    facets, labels = [], []
    for face, owners in _face_table(tets).items():
        if len(owners) == 2:
            ra, rb = regions[owners[0]], regions[owners[1]]
            if ra != rb:
                facets.append(face)
                labels.append(pair_label[frozenset((int(ra), int(rb)))])
        else:
            zc = vertices[list(face), 2]
            if np.all(np.abs(zc - z1) < _GEOM_TOL) or np.all(np.abs(zc - z2) < _GEOM_TOL):
                labels.append(GAMMA_D)
            else:
                labels.append(GAMMA_N)
            facets.append(face)
    return (np.asarray(facets, dtype=np.int64).reshape(-1, 3),
            np.asarray(labels, dtype=np.int64))


def synth_channel_mesh(geom: ChannelGeometry):
    """Build the synthetic channel mesh for ``geom`` and validate it.

    Regions are decided by the tet centroid; centroids exactly on an
    interface plane fall to the earlier branch of the classifier, which
    keeps ties on the solvent side of the pore cylinder.
    """
    verts, tets = structured_box(geom.box, geom.resolution)
    centroids = verts[tets].mean(axis=1)
    regions = np.fromiter((_classify_region(geom, c) for c in centroids),
                          dtype=np.int64, count=len(tets))
    facets, labels = derive_facets(verts, tets, regions, geom.box)
    mesh = LabeledMesh(verts, tets, regions, facets, labels,
                       geom.box, geom.z1, geom.z2)
    return mesh.validate()


def unit_cube_mesh(n=2, box=(0.0, 1.0, 0.0, 1.0, 0.0, 1.0)):
    """All-solvent structured box mesh (Dirichlet top/bottom, Neumann sides)."""
    verts, tets = structured_box(box, n)
    regions = np.full(len(tets), SOLVENT, dtype=np.int64)
    facets, labels = derive_facets(verts, tets, regions, box)
    # membrane planes unused; park them inside the box to satisfy validation
    z1, z2 = box[4], box[5]
    mesh = LabeledMesh(verts, tets, regions, facets, labels, box,
                       z1 + 0.25 * (z2 - z1), z1 + 0.75 * (z2 - z1))
    return mesh.validate()


# ---------------------------------------------------------------------------
# solvent submesh, restriction and prolongation

@dataclass
class SolventSubmesh:
    """Solvent-region submesh with maps to/from the parent box mesh."""

    parent: LabeledMesh
    vertex_map: np.ndarray  # solvent-local index -> parent index
    tets: np.ndarray  # (Ms, 4) solvent-local indices
    facets: np.ndarray  # (Ks, 3) solvent-local indices
    facet_labels: np.ndarray  # SUB_* labels
    parent_tet_ids: np.ndarray

    @property
    def vertices(self):
        return self.parent.vertices[self.vertex_map]

    @property
    def num_vertices(self):
        return self.vertex_map.shape[0]

    def restrict(self, f_omega):
        """Restrict a nodal field on the box mesh to the solvent submesh."""
        f_omega = np.asarray(f_omega)
        if f_omega.shape[-1] != self.parent.num_vertices:
            raise MeshError("field length %d != box node count" % f_omega.shape[-1])
        return f_omega[..., self.vertex_map]

    def prolong(self, f_s):
        """Extend a solvent nodal field to the box mesh by zero."""
        f_s = np.asarray(f_s)
        if f_s.shape[-1] != self.num_vertices:
            raise MeshError("field length %d != solvent node count" % f_s.shape[-1])
        out = np.zeros(f_s.shape[:-1] + (self.parent.num_vertices,))
        out[..., self.vertex_map] = f_s
        return out

    def dirichlet_side_nodes(self):
        """(bottom, top) solvent-local node sets on the Dirichlet facets."""
        z1 = self.parent.box[4]
        nodes = np.unique(self.facets[self.facet_labels == SUB_DIRICHLET])
        on_bottom = np.abs(self.vertices[nodes, 2] - z1) < _GEOM_TOL
        return nodes[on_bottom], nodes[~on_bottom]


def extract_solvent_submesh(mesh: LabeledMesh):
    """Build the solvent submesh of ``mesh`` (errors if no solvent tets)."""
    keep = np.nonzero(mesh.tet_regions == SOLVENT)[0]
    if keep.size == 0:
        raise MeshError("mesh has no solvent tets")
    sub_tets_parent = mesh.tets[keep]
    vmap = np.unique(sub_tets_parent)
    inverse = np.full(mesh.num_vertices, -1, dtype=np.int64)
    inverse[vmap] = np.arange(vmap.size)
    sub_tets = inverse[sub_tets_parent]

    # boundary facets of the submesh, tagged from the parent facet list
    parent_label = {}
    for f, lab in zip(mesh.facets, mesh.facet_labels):
        parent_label[tuple(sorted(f))] = int(lab)
    facets, labels = [], []
    for face, owners in _face_table(sub_tets).items():
        if len(owners) != 1:
            continue
        parent_face = tuple(sorted(vmap[list(face)]))
        lab = parent_label.get(parent_face)
        if lab in (GAMMA_P, GAMMA_M):
            labels.append(SUB_INTERFACE)
        elif lab == GAMMA_D:
            labels.append(SUB_DIRICHLET)
        elif lab == GAMMA_N:
            labels.append(SUB_NEUMANN)
        else:
            raise MeshError("solvent boundary face %s missing from parent facets" % (parent_face,))
        facets.append(face)
    return SolventSubmesh(mesh, vmap, sub_tets,
                          np.asarray(facets, dtype=np.int64).reshape(-1, 3),
                          np.asarray(labels, dtype=np.int64), keep)


def protein_ring_sites(mesh: LabeledMesh, n_sites, z_half_width=None):
    """Deterministic atom sites inside the protein region.

    Returns centroids of protein tets nearest the mid-membrane plane,
    spread in polar angle; tet centroids are strictly interior so the
    atom-node collision guard holds by construction.
    """
    ids = np.nonzero(mesh.tet_regions == PROTEIN)[0]
    if ids.size == 0:
        raise MeshError("mesh has no protein tets")
    cent = mesh.vertices[mesh.tets[ids]].mean(axis=1)
    zmid = 0.5 * (mesh.z1 + mesh.z2)
    if z_half_width is None:
        z_half_width = 0.25 * (mesh.z2 - mesh.z1)
    near = np.abs(cent[:, 2] - zmid) <= z_half_width
    if near.sum() >= n_sites:
        cent = cent[near]
    order = np.argsort(np.arctan2(cent[:, 1], cent[:, 0]), kind="stable")
    cent = cent[order]
    pick = np.linspace(0, len(cent) - 1, num=min(n_sites, len(cent)), dtype=int)
    return cent[np.unique(pick)]
