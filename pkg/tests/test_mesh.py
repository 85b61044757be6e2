import numpy as np
import pytest

from smpnp import fem_core, mesh as meshmod
from smpnp.errors import MeshError, MeshFormatError


def test_structured_box_counts():
    verts, tets = meshmod.structured_box((0, 10, 0, 10, 0, 10), 4)
    assert len(verts) == 125
    assert len(tets) == 384


def test_structured_box_positive_volumes():
    verts, tets = meshmod.structured_box((0, 1, 0, 1, 0, 1), 2)
    assert np.all(meshmod.tet_volumes(verts, tets) > 0)
    assert np.isclose(meshmod.tet_volumes(verts, tets).sum(), 1.0)


def test_load_minimal_cube(tmp_path):
    mesh = meshmod.unit_cube_mesh(1)
    assert mesh.num_vertices == 8
    assert mesh.num_tets == 6
    path = tmp_path / "cube.mesh"
    meshmod.save_mesh(mesh, path)
    loaded = meshmod.load_mesh(path)
    assert loaded.num_vertices == 8
    assert loaded.num_tets == 6


def test_load_unknown_region_tag(tmp_path):
    mesh = meshmod.unit_cube_mesh(1)
    path = tmp_path / "bad.mesh"
    meshmod.save_mesh(mesh, path)
    text = path.read_text().replace("0 6 2 7 1", "0 6 2 7 7")
    path.write_text(text)
    with pytest.raises(MeshFormatError, match="unknown region tag"):
        meshmod.load_mesh(path)


def test_save_load_round_trip_is_identity(tmp_path, channel_mesh):
    p1 = tmp_path / "a.mesh"
    p2 = tmp_path / "b.mesh"
    meshmod.save_mesh(channel_mesh, p1)
    meshmod.save_mesh(meshmod.load_mesh(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_truncated_file_reports_line(tmp_path):
    path = tmp_path / "trunc.mesh"
    path.write_text("smpnp-mesh 1\nvertices 2\n0 0 0\n")
    with pytest.raises(MeshFormatError):
        meshmod.load_mesh(path)


def test_validate_rejects_inverted_tet():
    mesh = meshmod.unit_cube_mesh(1)
    tets = mesh.tets.copy()
    tets[0, [0, 1]] = tets[0, [1, 0]]
    bad = meshmod.LabeledMesh(mesh.vertices, tets, mesh.tet_regions,
                              mesh.facets, mesh.facet_labels, mesh.box,
                              mesh.z1, mesh.z2)
    with pytest.raises(MeshError, match="inverted tet"):
        bad.validate()


def test_synth_slab_only_geometry():
    geom = meshmod.ChannelGeometry(pore_radius=0.0, shell_radius=0.0,
                                   resolution=6)
    mesh = meshmod.synth_channel_mesh(geom)
    assert not np.any(mesh.tet_regions == meshmod.PROTEIN)
    assert np.any(mesh.tet_regions == meshmod.MEMBRANE)


def test_synth_default_has_all_facet_labels(channel_mesh):
    present = set(np.unique(channel_mesh.facet_labels))
    assert present == {meshmod.GAMMA_P, meshmod.GAMMA_M, meshmod.GAMMA_PM,
                       meshmod.GAMMA_D, meshmod.GAMMA_N}


def test_synth_rejects_pore_not_smaller_than_shell():
    with pytest.raises(MeshError):
        meshmod.ChannelGeometry(pore_radius=14.0, shell_radius=14.0)


def test_region_volumes_near_analytic(channel_mesh):
    geom = meshmod.ChannelGeometry(resolution=8)
    x1, x2, y1, y2, zlo, zhi = geom.box
    slab = (geom.z2 - geom.z1)
    cell = (x2 - x1) / geom.resolution
    shell_area = np.pi * geom.shell_radius**2
    pore_area = np.pi * geom.pore_radius**2
    expect_protein = (shell_area - pore_area) * slab
    expect_membrane = ((x2 - x1) * (y2 - y1) - shell_area) * slab
    got_protein = channel_mesh.region_volume(meshmod.PROTEIN)
    got_membrane = channel_mesh.region_volume(meshmod.MEMBRANE)
    # centroid classification: allow one cell layer around each interface
    tol = cell * 2.0 * np.pi * geom.shell_radius * slab
    assert abs(got_protein - expect_protein) < tol
    assert abs(got_membrane - expect_membrane) < tol


def test_submesh_all_solvent_cube(cube_mesh):
    sub = meshmod.extract_solvent_submesh(cube_mesh)
    assert len(sub.tets) == cube_mesh.num_tets
    assert sub.num_vertices == cube_mesh.num_vertices


def test_submesh_facet_tags_restricted(channel_submesh):
    present = set(np.unique(channel_submesh.facet_labels))
    assert present <= {meshmod.SUB_INTERFACE, meshmod.SUB_DIRICHLET,
                       meshmod.SUB_NEUMANN}
    assert meshmod.SUB_DIRICHLET in present


def test_submesh_requires_solvent(cube_mesh):
    mesh = meshmod.LabeledMesh(cube_mesh.vertices, cube_mesh.tets,
                               np.full(cube_mesh.num_tets, meshmod.PROTEIN),
                               cube_mesh.facets, cube_mesh.facet_labels,
                               cube_mesh.box, cube_mesh.z1, cube_mesh.z2)
    with pytest.raises(MeshError, match="no solvent tets"):
        meshmod.extract_solvent_submesh(mesh)


def test_restrict_prolong_round_trip(channel_submesh, rng):
    f = rng.normal(size=channel_submesh.num_vertices)
    assert np.array_equal(channel_submesh.restrict(channel_submesh.prolong(f)), f)


def test_prolong_constant(channel_submesh):
    out = channel_submesh.prolong(np.ones(channel_submesh.num_vertices))
    assert np.all(out[channel_submesh.vertex_map] == 1.0)
    mask = np.ones(channel_submesh.parent.num_vertices, dtype=bool)
    mask[channel_submesh.vertex_map] = False
    assert np.all(out[mask] == 0.0)


def test_restrict_length_mismatch(channel_submesh):
    with pytest.raises(MeshError):
        channel_submesh.restrict(np.zeros(3))
    with pytest.raises(MeshError):
        channel_submesh.prolong(np.zeros(3))


def test_prolong_adjoint_quadrature_identity(channel_mesh, channel_submesh, rng):
    # int_{D_s} P(f) v on the box mesh equals int f R(v) on the submesh
    f = rng.normal(size=channel_submesh.num_vertices)
    v = rng.normal(size=channel_mesh.num_vertices)
    mass_box = fem_core.assemble_mass(
        channel_mesh, tet_mask=channel_mesh.tet_regions == meshmod.SOLVENT)
    mass_sub = fem_core.assemble_mass(channel_submesh)
    lhs = channel_submesh.prolong(f) @ (mass_box @ v)
    rhs = f @ (mass_sub @ channel_submesh.restrict(v))
    assert np.isclose(lhs, rhs, rtol=1e-12)


def test_interior_faces_shared_by_two_tets(cube_mesh):
    table = meshmod._face_table(cube_mesh.tets)
    boundary = {tuple(sorted(f)) for f in cube_mesh.facets}
    for face, owners in table.items():
        if face in boundary:
            assert len(owners) == 1
        else:
            assert len(owners) == 2


def test_protein_ring_sites(channel_mesh):
    sites = meshmod.protein_ring_sites(channel_mesh, 16)
    assert len(sites) >= 8
    geom = meshmod.ChannelGeometry(resolution=8)
    r = np.hypot(sites[:, 0], sites[:, 1])
    assert np.all(r > geom.pore_radius * 0.5)
    assert np.all((sites[:, 2] > geom.z1) & (sites[:, 2] < geom.z2))
