import numpy as np
import pytest

from hsikit import scene as sc
from _oracles import rasterize_naive, grouping_naive, counts_naive


def square(x0, y0, side, land_cover=1, land_use=1, group=None):
    return sc.Polygon(
        vertices=np.array(
            [[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side]],
            dtype=float,
        ),
        land_cover=land_cover,
        land_use=land_use,
        group=group,
    )


def blank_scene(h=16, w=16, b=5):
    axis = sc.SpectralAxis.linear(0.4, 2.5, b)
    return sc.HyperspectralScene(cube=np.zeros((h, w, b), dtype=np.float32), gsd_m=1.0, axis=axis)


class TestSpectralAxis:
    def test_requires_ascending(self):
        with pytest.raises(ValueError):
            sc.SpectralAxis(np.array([0.5, 0.4]))

    def test_requires_physical_range(self):
        with pytest.raises(ValueError):
            sc.SpectralAxis(np.array([0.1, 0.5]))
        with pytest.raises(ValueError):
            sc.SpectralAxis(np.array([0.5, 3.5]))

    def test_band_count(self):
        assert sc.SpectralAxis.linear(0.4, 2.5, 310).band_count == 310


class TestSceneInvariants:
    def test_rejects_negative(self):
        axis = sc.SpectralAxis.linear(0.4, 2.5, 3)
        with pytest.raises(ValueError):
            sc.HyperspectralScene(cube=-np.ones((2, 2, 3)), gsd_m=1.0, axis=axis)

    def test_rejects_nonfinite(self):
        axis = sc.SpectralAxis.linear(0.4, 2.5, 3)
        cube = np.ones((2, 2, 3))
        cube[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            sc.HyperspectralScene(cube=cube, gsd_m=1.0, axis=axis)

    def test_rejects_band_mismatch(self):
        axis = sc.SpectralAxis.linear(0.4, 2.5, 4)
        with pytest.raises(ValueError):
            sc.HyperspectralScene(cube=np.ones((2, 2, 3)), gsd_m=1.0, axis=axis)


class TestNomenclature:
    def test_default_shape(self):
        nom = sc.default_nomenclature()
        assert nom.n_classes == 32
        assert len(nom.land_use) == 12
        names = nom.leaf_names()
        assert sorted(names) == list(range(1, 33))

    def test_rejects_gappy_ids(self):
        leaves = tuple(sc.NomenclatureNode(f"c{i}", leaf_id=i) for i in (1, 3))
        root = sc.NomenclatureNode("land cover", children=leaves)
        with pytest.raises(ValueError):
            sc.Nomenclature(root=root, land_use=("a",))


class TestRasterize:
    def test_empty_ground_truth(self):
        scene = blank_scene()
        labels = sc.rasterize_ground_truth(scene, sc.GroundTruth())
        assert labels.shape == (16, 16)
        assert not labels.any()

    def test_axis_aligned_square(self):
        scene = blank_scene()
        gt = sc.GroundTruth([square(1, 1, 2, land_cover=3)])
        labels = sc.rasterize_ground_truth(scene, gt)
        assert (labels == 3).sum() == 4
        assert set(zip(*np.nonzero(labels == 3))) == {(1, 1), (1, 2), (2, 1), (2, 2)}

    def test_matches_naive_scan(self):
        rng = np.random.default_rng(5)
        scene = blank_scene(24, 24)
        polygons = []
        # non-overlapping boxes on a coarse grid, random classes
        cells = [(gx * 6 + 1, gy * 6 + 1) for gx in range(3) for gy in range(3)]
        rng.shuffle(cells)
        for i, (x0, y0) in enumerate(cells[:10] if len(cells) >= 10 else cells):
            side = int(rng.integers(2, 5))
            polygons.append(square(x0, y0, side, land_cover=int(rng.integers(1, 6))))
        gt = sc.GroundTruth(polygons)
        labels = sc.rasterize_ground_truth(scene, gt)
        expected, conflict = rasterize_naive(24, 24, polygons)
        assert not conflict
        assert np.array_equal(labels, expected)

    def test_idempotent(self):
        scene = blank_scene()
        gt = sc.GroundTruth([square(2, 3, 4, land_cover=2)])
        a = sc.rasterize_ground_truth(scene, gt)
        b = sc.rasterize_ground_truth(scene, gt)
        assert np.array_equal(a, b)

    def test_conflicting_overlap_raises(self):
        scene = blank_scene()
        gt = sc.GroundTruth([square(1, 1, 4, land_cover=1), square(2, 2, 4, land_cover=2)])
        with pytest.raises(sc.AnnotationConflictError):
            sc.rasterize_ground_truth(scene, gt)

    def test_out_of_bounds_rejected(self):
        scene = blank_scene()
        gt = sc.GroundTruth([square(14, 14, 4)])
        with pytest.raises(ValueError):
            sc.rasterize_ground_truth(scene, gt)

    def test_self_intersecting_rejected(self):
        scene = blank_scene()
        bow_tie = sc.Polygon(
            vertices=np.array([[1, 1], [5, 5], [5, 1], [1, 5]], dtype=float),
            land_cover=1,
            land_use=1,
        )
        with pytest.raises(ValueError):
            sc.rasterize_ground_truth(scene, sc.GroundTruth([bow_tie]))


class TestGrouping:
    def test_single_polygon(self):
        gt, n = sc.group_polygons(sc.GroundTruth([square(1, 1, 2)]), radius_m=5, gsd_m=1)
        assert n == 1
        assert gt.polygons[0].group == 0

    def test_two_far_polygons(self):
        gt, n = sc.group_polygons(
            sc.GroundTruth([square(0, 0, 2), square(20, 20, 2)]), radius_m=5, gsd_m=1
        )
        assert n == 2

    def test_matches_union_find_oracle(self):
        rng = np.random.default_rng(11)
        polygons = []
        for _ in range(20):
            x0, y0 = rng.integers(0, 90, size=2)
            polygons.append(square(float(x0), float(y0), float(rng.integers(2, 6))))
        gt, n = sc.group_polygons(sc.GroundTruth(polygons), radius_m=8.0, gsd_m=1.0)
        roots = grouping_naive(polygons, 8.0)
        # same partition up to relabeling
        ours = [p.group for p in gt.polygons]
        mapping = {}
        for a, b in zip(ours, roots):
            assert mapping.setdefault(a, b) == b
        assert len(set(ours)) == len(set(roots)) == n

    def test_order_invariant_partition(self):
        rng = np.random.default_rng(3)
        polygons = [
            square(float(x), float(y), 3.0)
            for x, y in rng.integers(0, 60, size=(12, 2))
        ]
        gt1, n1 = sc.group_polygons(sc.GroundTruth(polygons), radius_m=6, gsd_m=1)
        reordered = list(reversed(polygons))
        gt2, n2 = sc.group_polygons(sc.GroundTruth(reordered), radius_m=6, gsd_m=1)
        assert n1 == n2
        pairs_1 = {
            (i, j)
            for i in range(12)
            for j in range(12)
            if gt1.polygons[i].group == gt1.polygons[j].group
        }
        perm = {i: 11 - i for i in range(12)}
        pairs_2 = {
            (perm[i], perm[j])
            for i in range(12)
            for j in range(12)
            if gt2.polygons[i].group == gt2.polygons[j].group
        }
        assert pairs_1 == pairs_2

    def test_radius_scales_with_gsd(self):
        # boundary gap is 6 px: 10 m at 2 m/px -> 5 px radius (separate),
        # 10 m at 0.5 m/px -> 20 px radius (merged)
        polys = [square(0, 0, 2), square(8, 0, 2)]
        _, n_coarse = sc.group_polygons(sc.GroundTruth(polys), radius_m=10, gsd_m=2.0)
        _, n_fine = sc.group_polygons(sc.GroundTruth(polys), radius_m=10, gsd_m=0.5)
        assert n_coarse == 2
        assert n_fine == 1

    def test_requires_positive_radius(self):
        with pytest.raises(ValueError):
            sc.group_polygons(sc.GroundTruth([square(0, 0, 2)]), radius_m=0, gsd_m=1)


class TestClassPixelCounts:
    def test_all_unlabeled(self):
        M = sc.class_pixel_counts(np.zeros((4, 4), dtype=int), np.full((4, 4), -1), n_classes=3)
        assert M.P.shape == (0, 3)

    def test_single_group_single_class(self):
        labels = np.zeros((4, 4), dtype=int)
        groups = np.full((4, 4), -1)
        labels[1:3, 1:3] = 1
        labels[0, 0] = 1
        labels[3, 3] = 1
        labels[3, 0] = 1
        groups[labels > 0] = 0
        M = sc.class_pixel_counts(labels, groups)
        assert M.P.tolist() == [[7]]

    def test_matches_tally_oracle(self):
        rng = np.random.default_rng(7)
        labels = rng.integers(0, 5, size=(20, 20))
        groups = np.where(labels > 0, rng.integers(0, 4, size=(20, 20)), -1)
        M = sc.class_pixel_counts(labels, groups, n_classes=4)
        assert np.array_equal(M.P, counts_naive(labels, groups, 4, 4))
        assert M.P.sum() == ((labels > 0) & (groups >= 0)).sum()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            sc.class_pixel_counts(np.zeros((2, 2), dtype=int), np.zeros((3, 3), dtype=int))


class TestSyntheticScene:
    def test_shape_contract(self):
        scene, gt = sc.generate_synthetic_scene(0, 64, 64, 310, 5, 12)
        assert scene.cube.shape == (64, 64, 310)
        assert len(gt.polygons) == 12
        assert scene.axis.band_count == 310

    def test_deterministic(self):
        a, gta = sc.generate_synthetic_scene(3, 48, 40, 64, 4, 8)
        b, gtb = sc.generate_synthetic_scene(3, 48, 40, 64, 4, 8)
        assert np.array_equal(a.cube, b.cube)
        for pa, pb in zip(gta.polygons, gtb.polygons):
            assert np.array_equal(pa.vertices, pb.vertices)
            assert pa.land_cover == pb.land_cover

    def test_zero_noise_leaves_pure_jittered_spectra(self):
        scene, gt = sc.generate_synthetic_scene(
            1, 32, 32, 40, 3, 5, noise_sigma=0.0, brightness_jitter=0.2
        )
        labels = sc.rasterize_ground_truth(scene, gt)
        ys, xs = np.nonzero(labels == gt.polygons[0].land_cover)
        spectra = scene.cube[ys, xs].astype(np.float64)
        # every pixel is a scalar multiple of the same endmember
        ref = spectra[0] / np.linalg.norm(spectra[0])
        for row in spectra:
            assert np.allclose(row / np.linalg.norm(row), ref, atol=1e-5)

    def test_scene_invariants_across_seeds(self):
        for seed in range(4):
            scene, _ = sc.generate_synthetic_scene(seed, 24, 24, 32, 3, 6)
            assert np.all(np.isfinite(scene.cube))
            assert scene.cube.min() >= 0

    def test_material_budget(self):
        with pytest.raises(ValueError):
            sc.generate_synthetic_scene(0, 32, 32, 16, 40, 40)

    def test_packing_failure(self):
        with pytest.raises(sc.SceneGenerationError):
            sc.generate_synthetic_scene(0, 12, 12, 8, 2, 60, max_attempts_per_polygon=5)


class TestFileFormats:
    def test_scene_roundtrip(self, tmp_path):
        scene, _ = sc.generate_synthetic_scene(2, 16, 20, 12, 2, 3)
        path = tmp_path / "scene.bip"
        sc.save_scene(scene, path)
        again = sc.load_scene(path)
        assert np.array_equal(scene.cube, again.cube)
        assert again.gsd_m == scene.gsd_m
        assert np.allclose(again.axis.wavelengths_um, scene.axis.wavelengths_um)

    def test_scene_file_is_bip_float32(self, tmp_path):
        scene, _ = sc.generate_synthetic_scene(2, 16, 20, 3, 2, 2)
        path = tmp_path / "scene.bip"
        sc.save_scene(scene, path)
        raw = np.frombuffer(path.read_bytes(), dtype="<f4")
        # first B values are the spectrum of pixel (0, 0)
        assert np.allclose(raw[:3], scene.cube[0, 0])

    def test_ground_truth_roundtrip(self, tmp_path):
        gt = sc.GroundTruth([square(1, 2, 3, land_cover=4, land_use=2, group=1)])
        path = tmp_path / "gt.json"
        sc.save_ground_truth(gt, path)
        again = sc.load_ground_truth(path)
        assert len(again.polygons) == 1
        p = again.polygons[0]
        assert p.land_cover == 4 and p.land_use == 2 and p.group == 1
        assert np.array_equal(p.vertices, gt.polygons[0].vertices)
