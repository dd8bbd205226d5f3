import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_box, make_icosphere, random_rotation
from sparse4d.errors import MeshFormatError, TopologyMismatchError
from sparse4d.fileio import load_manifest, load_obj, parse_obj, read_point_frame, save_obj, write_point_frames
from sparse4d.geometry import (
    SHARP,
    LatentMomentSequence,
    TriangleMesh,
    build_tracked_sequence,
    check_watertight,
    concatenate,
    coverage_radius,
    detect_sharp_edges,
    euler_characteristic,
    farthest_point_sampling,
    independent_noise_reparameterize,
    is_watertight,
    normalize_sequence,
    project_to_surface,
    propagate,
    sample_sharp,
    sample_uniform,
    shared_noise_reparameterize,
)

RIGHT_TRIANGLE = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])


def flat_square(diagonal="anti"):
    v = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]]
    f = [[0, 1, 3], [1, 2, 3]] if diagonal == "anti" else [[0, 1, 2], [0, 2, 3]]
    return TriangleMesh(v, f)


def random_mesh(rng, n_vertices=30):
    verts = rng.standard_normal((n_vertices, 3))
    faces = []
    while len(faces) < 40:
        f = rng.choice(n_vertices, 3, replace=False)
        faces.append(f)
    return TriangleMesh(verts, faces)


def assert_valid_samples(s, mesh):
    assert (s.barycentric >= 0).all()
    np.testing.assert_allclose(s.barycentric.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(np.einsum("nk,nkd->nd", s.barycentric, mesh.triangles[s.face_index]),
                               s.positions, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(s.normals, axis=1), 1.0, atol=1e-6)


class TestMesh:
    def test_rejects_bad_index(self):
        with pytest.raises(ValueError):
            TriangleMesh([[0, 0, 0]], [[0, 1, 2]])

    def test_rejects_repeated_index(self):
        with pytest.raises(ValueError, match="degenerate"):
            TriangleMesh(np.eye(3), [[0, 0, 1]])

    def test_cube_is_watertight(self, unit_cube):
        assert is_watertight(unit_cube)
        assert euler_characteristic(unit_cube) == 2
        assert not is_watertight(flat_square())
        with pytest.warns(UserWarning, match="boundary edges"):
            check_watertight(flat_square())


class TestSampleUniform:
    def test_centroid(self):
        s = sample_uniform(RIGHT_TRIANGLE, 10000, seed=0)
        assert np.linalg.norm(s.positions.mean(axis=0) - [1 / 3, 1 / 3, 0]) < 0.02
        assert_valid_samples(s, RIGHT_TRIANGLE)

    def test_area_weighting(self):
        # areas 1 and 3
        mesh = TriangleMesh([[0, 0, 0], [2, 0, 0], [0, 1, 0], [10, 0, 0], [16, 0, 0], [10, 1, 0]],
                            [[0, 1, 2], [3, 4, 5]])
        np.testing.assert_allclose(mesh.face_areas, [1, 3])
        s = sample_uniform(mesh, 10000, seed=1)
        assert abs(np.mean(s.face_index == 1) - 0.75) < 0.02

    def test_single_sample(self, unit_cube):
        s = sample_uniform(unit_cube, 1, seed=3)
        assert len(s) == 1
        assert_valid_samples(s, unit_cube)
        one = s[0]
        assert one.tag == "uniform" and abs(sum(one.barycentric) - 1) < 1e-9

    def test_deterministic(self, icosphere):
        a, b = sample_uniform(icosphere, 50, seed=7), sample_uniform(icosphere, 50, seed=7)
        np.testing.assert_array_equal(a.positions, b.positions)

    def test_zero_area(self):
        with pytest.raises(ValueError, match="zero total"):
            sample_uniform(TriangleMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]]), 5)


class TestSharpEdges:
    def test_cube_twelve_edges(self, unit_cube):
        edges = detect_sharp_edges(unit_cube, 30)
        assert len(edges) == 12
        d = unit_cube.vertices[edges[:, 0]] - unit_cube.vertices[edges[:, 1]]
        # geometric edges are axis-aligned, diagonals are not
        assert ((np.abs(d) > 1e-12).sum(axis=1) == 1).all()

    def test_flat_square_only_boundary(self):
        edges = detect_sharp_edges(flat_square(), 30)
        assert len(edges) == 4
        assert [1, 3] not in edges.tolist()

    def test_icosphere_smooth_at_80(self, icosphere):
        assert len(detect_sharp_edges(icosphere, 80)) == 0
        # the base icosahedron's dihedral deviation is ~41.8 degrees
        assert len(detect_sharp_edges(make_icosphere(0), 40)) == 30

    def test_threshold_range(self, unit_cube):
        with pytest.raises(ValueError):
            detect_sharp_edges(unit_cube, 180)


class TestSampleSharp:
    def test_length_weighting(self):
        mesh = TriangleMesh([[0, 0, 0], [2, 0, 0], [0, 1, 0]], [[0, 1, 2]])
        edges = np.array([[0, 1], [0, 2]])  # lengths 2 and 1
        s = sample_sharp(mesh, edges, 9000, seed=0)
        on_long = np.abs(s.positions[:, 1]) < 1e-12
        assert abs(on_long.mean() - 2 / 3) < 0.02

    def test_points_on_edge(self, unit_cube):
        edges = detect_sharp_edges(unit_cube)
        s = sample_sharp(unit_cube, edges, 500, seed=1)
        assert (np.abs(s.barycentric).min(axis=1) <= 1e-12).all()
        assert (s.tags == SHARP).all()
        assert_valid_samples(s, unit_cube)
        # every point lies on a cube edge: two coordinates at +-0.5
        assert ((np.abs(np.abs(s.positions) - 0.5) < 1e-12).sum(axis=1) >= 2).all()

    def test_zero_and_empty(self, unit_cube):
        assert len(sample_sharp(unit_cube, detect_sharp_edges(unit_cube), 0)) == 0
        with pytest.raises(ValueError):
            sample_sharp(unit_cube, np.zeros((0, 2)), 5)


class TestPropagate:
    def test_identity(self, icosphere):
        s = sample_uniform(icosphere, 200, seed=0)
        np.testing.assert_array_equal(propagate(s, icosphere).positions, s.positions)

    def test_rotation(self, icosphere):
        rng = np.random.default_rng(1)
        R = random_rotation(rng)
        s = sample_uniform(icosphere, 300, seed=2)
        out = propagate(s, icosphere.transformed(R))
        np.testing.assert_allclose(out.positions, s.positions @ R.T, atol=1e-9)
        np.testing.assert_allclose(out.normals, s.normals @ R.T, atol=1e-9)

    def test_reindexed_face(self, unit_cube):
        s = sample_uniform(unit_cube, 10, seed=0)
        faces = unit_cube.faces.copy()
        faces[3] = faces[3][[1, 2, 0]]
        with pytest.raises(TopologyMismatchError):
            propagate(s, TriangleMesh(unit_cube.vertices, faces))
        with pytest.raises(TopologyMismatchError):
            propagate(s, TriangleMesh(unit_cube.vertices, unit_cube.faces[:-1]))

    def test_provenance_frame_independent(self, icosphere):
        s = sample_uniform(icosphere, 50, seed=4)
        rng = np.random.default_rng(0)
        frames = [icosphere.transformed(np.diag(rng.uniform(0.5, 2, 3))) for _ in range(3)]
        for f in frames:
            out = propagate(s, f)
            np.testing.assert_array_equal(out.face_index, s.face_index)
            np.testing.assert_array_equal(out.barycentric, s.barycentric)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_propagate_affine_equivariance(seed):
    rng = np.random.default_rng(seed)
    rest = random_mesh(rng)
    A = rng.standard_normal((3, 3))
    b = rng.standard_normal(3)
    s = sample_uniform(rest, 100, seed=seed)
    out = propagate(s, rest.transformed(A, b))
    np.testing.assert_allclose(out.positions, s.positions @ A.T + b, atol=1e-9)


class TestProject:
    def test_centroid_fixed_point(self, icosphere):
        c = icosphere.face_centroids[[0, 5, 17]]
        out = project_to_surface(c, icosphere)
        np.testing.assert_array_equal(out.face_index, [0, 5, 17])
        np.testing.assert_array_equal(out.positions, c)

    def test_point_above_square(self):
        # centroids (1/3, 1/3, 0) and (2/3, 2/3, 0); the first is nearer to (0, 0, 2)
        mesh = flat_square("anti")
        out = project_to_surface([[0, 0, 2]], mesh)
        np.testing.assert_allclose(out.positions[0], [1 / 3, 1 / 3, 0])
        np.testing.assert_allclose(out.normals[0], [0, 0, 1])

    def test_sphere_bound(self):
        sphere = make_icosphere(3)
        rng = np.random.default_rng(0)
        dirs = rng.standard_normal((10000, 3))
        pts = dirs / np.linalg.norm(dirs, axis=1, keepdims=True) * rng.uniform(0.9, 1.1, (10000, 1))
        out = project_to_surface(pts, sphere)
        tri = sphere.triangles
        max_edge = max(np.linalg.norm(tri[:, i] - tri[:, (i + 1) % 3], axis=1).max() for i in range(3))
        assert (np.abs(np.linalg.norm(out.positions, axis=1) - 1.0) <= max_edge).all()

    def test_idempotent(self, icosphere):
        pts = np.random.default_rng(2).standard_normal((100, 3))
        once = project_to_surface(pts, icosphere)
        twice = project_to_surface(once.positions, icosphere)
        np.testing.assert_array_equal(once.positions, twice.positions)
        np.testing.assert_array_equal(once.face_index, twice.face_index)

    def test_empty_mesh(self):
        with pytest.raises(ValueError):
            project_to_surface([[0, 0, 0]], TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3))))


class TestFPS:
    SQUARE = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float)

    def test_square_diagonal_every_start(self):
        for start in range(4):
            a, b = farthest_point_sampling(self.SQUARE, 2, start=start)
            assert np.linalg.norm(self.SQUARE[a] - self.SQUARE[b]) == pytest.approx(np.sqrt(2))

    def test_collinear(self):
        pts = np.stack([np.arange(11.0), np.zeros(11), np.zeros(11)], axis=1)
        assert farthest_point_sampling(pts, 3, start=0).tolist() == [0, 10, 5]

    def test_k_equals_n(self):
        pts = np.random.default_rng(0).standard_normal((12, 3))
        idx = farthest_point_sampling(pts, 12, seed=0)
        assert sorted(idx.tolist()) == list(range(12))

    def test_seeded_start_deterministic(self):
        pts = np.random.default_rng(1).standard_normal((50, 3))
        np.testing.assert_array_equal(farthest_point_sampling(pts, 10, seed=3),
                                      farthest_point_sampling(pts, 10, seed=3))

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            farthest_point_sampling(self.SQUARE, 5)

    def test_coverage_non_increasing(self):
        pts = np.random.default_rng(2).standard_normal((200, 3))
        idx = farthest_point_sampling(pts, 60, seed=0)
        radii = [coverage_radius(pts, idx[:k]) for k in range(1, 61)]
        assert all(b <= a for a, b in zip(radii, radii[1:]))

    def test_greedy_matches_brute_force(self):
        # brute force: at each step, evaluate every candidate's min distance explicitly
        pts = np.random.default_rng(5).standard_normal((25, 3))
        sel = [0]
        for _ in range(7):
            best, best_d = None, -1.0
            for c in range(len(pts)):
                d = min(np.linalg.norm(pts[c] - pts[s]) for s in sel)
                if d > best_d:
                    best, best_d = c, d
            sel.append(best)
        assert farthest_point_sampling(pts, 8, start=0).tolist() == sel


class TestNormalize:
    def test_hand_example(self):
        out, center, scale = normalize_sequence([np.array([[0.0, 0, 0]]), np.array([[2.0, 0, 0]])])
        np.testing.assert_allclose(center, [1, 0, 0])
        assert scale == 1.0
        np.testing.assert_allclose(out[0], [[-1, 0, 0]])
        np.testing.assert_allclose(out[1], [[1, 0, 0]])

    def test_already_normalized(self):
        seq = np.array([[[-1.0, -0.5, 0.2], [1.0, 0.5, -0.2]]])
        out, center, scale = normalize_sequence(seq)
        np.testing.assert_allclose(center, 0, atol=1e-15)
        assert scale == 1.0
        np.testing.assert_allclose(out, seq)

    def test_scale_invariant_and_tight(self):
        seq = np.random.default_rng(0).standard_normal((4, 100, 3)) * [1, 3, 0.5] + 7
        a, _, _ = normalize_sequence(seq)
        b, _, _ = normalize_sequence(seq * 5)
        np.testing.assert_allclose(a, b, atol=1e-12)
        assert np.abs(a).max() <= 1.0
        # longest axis (y) touches both faces of the box
        assert np.isclose(a[..., 1].min(), -1) and np.isclose(a[..., 1].max(), 1)

    def test_single_box_for_all_frames(self):
        seq = np.zeros((2, 1, 3))
        seq[1, 0] = [4, 2, 0]
        out, center, scale = normalize_sequence(seq)
        np.testing.assert_allclose(center, [2, 1, 0])
        assert scale == 0.5

    def test_zero_extent(self):
        with pytest.raises(ValueError):
            normalize_sequence(np.ones((3, 4, 3)))


class TestNoise:
    def test_unit_moments(self):
        m = LatentMomentSequence(np.zeros((3, 4, 2)), np.zeros((3, 4, 2)))
        eps = np.random.default_rng(0).standard_normal((4, 2))
        z = shared_noise_reparameterize(m, noise=eps)
        for t in range(3):
            np.testing.assert_array_equal(z[t], eps)

    def test_constant_moments_constant_latent(self):
        rng = np.random.default_rng(1)
        mu, lv = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
        m = LatentMomentSequence(np.stack([mu] * 5), np.stack([lv] * 5))
        z = shared_noise_reparameterize(m, seed=3)
        assert (np.diff(z, axis=0) == 0).all()
        zi = independent_noise_reparameterize(m, seed=3)
        assert np.abs(np.diff(zi, axis=0)).max() > 0.1

    def test_difference_bound_100_seeds(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            t = np.linspace(0, 1, 6)[:, None, None]
            base, vel = rng.standard_normal((2, 8, 3))
            mu = base + t * vel
            lv = np.sin(t + rng.standard_normal((8, 3)))
            m = LatentMomentSequence(mu, lv)
            eps = rng.standard_normal((8, 3))
            z = shared_noise_reparameterize(m, noise=eps)
            sig = m.std
            for k in range(5):
                lhs = np.abs(z[k + 1] - z[k]).max()
                rhs = np.abs(mu[k + 1] - mu[k]).max() + np.abs(eps).max() * np.abs(sig[k + 1] - sig[k]).max()
                assert lhs <= rhs + 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            LatentMomentSequence([np.zeros((2, 2)), np.zeros((3, 2))], [np.zeros((2, 2))] * 2)
        m = LatentMomentSequence(np.zeros((2, 3, 2)), np.zeros((2, 3, 2)))
        with pytest.raises(ValueError):
            shared_noise_reparameterize(m, noise=np.zeros((3, 3)))


class TestPipeline:
    def test_tracked_sequence(self, icosphere):
        rng = np.random.default_rng(0)
        rest = sample_uniform(icosphere, 300, seed=0)
        frames = [icosphere.transformed(random_rotation(rng)) for _ in range(3)]
        seq = build_tracked_sequence(rest, frames, watertight=frames, fps_k=16, seed=1)
        assert seq.positions.shape == (3, 300, 3)
        assert seq.queries().shape == (3, 16, 3)
        # frame 0 queries are FPS on frame 0's projected points
        np.testing.assert_array_equal(
            seq.fps_indices, farthest_point_sampling(seq.positions[0], 16, seed=1))
        norm, center, scale = normalize_sequence(seq)
        assert np.abs(norm.positions).max() <= 1.0
        np.testing.assert_array_equal(norm.fps_indices, seq.fps_indices)

    def test_concatenate(self, unit_cube):
        u = sample_uniform(unit_cube, 5, seed=0)
        s = sample_sharp(unit_cube, detect_sharp_edges(unit_cube), 4, seed=0)
        both = concatenate([u, s])
        assert len(both) == 9 and (both.tags[5:] == SHARP).all()


class TestFileIO:
    def test_obj_roundtrip(self, tmp_path, icosphere):
        path = save_obj(icosphere, tmp_path / "s.obj")
        back = load_obj(path)
        np.testing.assert_array_equal(back.faces, icosphere.faces)
        np.testing.assert_allclose(back.vertices, icosphere.vertices, rtol=0, atol=0)

    def test_obj_slashes_and_negative(self):
        mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2//2 -1\n")
        assert mesh.faces.tolist() == [[0, 1, 2]]

    def test_quads_rejected(self):
        with pytest.raises(MeshFormatError, match="triangle"):
            parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")

    def test_manifest_relative(self, tmp_path):
        (tmp_path / "m.json").write_text('{"rest": "r.obj", "frames": [{"deformed": "d0.obj", "watertight": "w0.obj"}]}')
        m = load_manifest(tmp_path / "m.json")
        assert m["rest"] == str((tmp_path / "r.obj").resolve())
        assert m["frames"][0]["watertight"].endswith("w0.obj")

    def test_point_frames(self, tmp_path):
        pos = np.random.default_rng(0).standard_normal((2, 5, 3))
        nrm = np.random.default_rng(1).standard_normal((2, 5, 3))
        files = write_point_frames(tmp_path, pos, nrm)
        assert [f.name for f in files] == ["frame_0000.bin", "frame_0001.bin"]
        rec = read_point_frame(files[1])
        np.testing.assert_allclose(rec[:, :3], pos[1].astype(np.float32))
        np.testing.assert_allclose(rec[:, 3:], nrm[1].astype(np.float32))
        assert files[0].stat().st_size == 5 * 6 * 4


def test_all_box_face_pairs_consistent(unit_cube):
    # sanity for the fixture: outward normals on every face
    c = unit_cube.face_centroids
    n = unit_cube.face_normals
    assert all(np.dot(ci, ni) > 0 for ci, ni in zip(c, n)) or all(np.dot(ci, ni) < 0 for ci, ni in zip(c, n))
    assert len(list(itertools.combinations(range(12), 2))) == 66
