"""End-to-end acceptance suite.

Each test here is a top-level capability check: robust PnP accuracy,
retrieval correctness under occlusion, refinement convergence, desk-scale
pose accuracy, metric oracles, rotation-sampling coverage, and full-run
determinism. The per-module suites cover the finer-grained behavior.
"""

import time

import numpy as np
import pytest

from bowpose.evaluation import (SymmetrySet, average_recall, mspd, mssd, vsd)
from bowpose.features import GradientBackend, extract_grid, read_feature_file
from bowpose.geometry import CameraIntrinsics, Pose, project
from bowpose.onboarding import (Codebook, IdfStats, OnboardConfig,
                                compute_bow, load_representation,
                                onboard_object, representation_digest,
                                save_representation)
from bowpose.pipeline import DetectionInput, EstimateOptions, estimate_pose
from bowpose.pose_estimation import CorrespondenceSet, ransac_pnp
from bowpose.refinement import RefinementConfig, refine, featuremetric_cost
from bowpose.rendering import (geodesic_angle, render_depth, render_template,
                               sample_rotations)
from bowpose.retrieval import query_bow, retrieve
from bowpose.synth import cube_mesh
from conftest import DESK_CONFIG, SMALL_CONFIG
from test_pipeline import K_SCENE, render_scene


def axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    S = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    return np.eye(3) + np.sin(angle) * S + (1.0 - np.cos(angle)) * (S @ S)


def rotation_error_deg(Ra, Rb):
    return np.degrees(geodesic_angle(Ra, Rb))


class TestRobustPnP:
    def test_accuracy_under_noise_and_outliers(self):
        # 100 correspondences per trial, 0.5 px noise, 40% outliers
        K = CameraIntrinsics(fx=500.0, fy=500.0, cx=210.0, cy=210.0,
                             width=420, height=420)
        rotations = sample_rotations(100, 3)
        successes = 0
        t0 = time.perf_counter()
        for s in range(100):
            rng = np.random.default_rng(1000 + s)
            pose_true = Pose(rotations[s], np.array([
                rng.uniform(-30, 30), rng.uniform(-30, 30),
                rng.uniform(900, 1100)]))
            pts = rng.uniform(-150.0, 150.0, size=(100, 3))
            uv = project(pts, pose_true, K)
            uv += rng.normal(0.0, 0.5, size=uv.shape)
            outliers = rng.choice(100, size=40, replace=False)
            uv[outliers] = rng.uniform(0.0, 420.0, size=(40, 2))

            corrs = CorrespondenceSet(points2d=uv, points3d=pts,
                                      match_distances=np.zeros(100))
            hyp = ransac_pnp(corrs, K, max_iters=400,
                             inlier_threshold_px=10.0, seed=s, template_id=0)
            rot_err = rotation_error_deg(hyp.pose.rotation,
                                         pose_true.rotation)
            t_err = np.linalg.norm(hyp.pose.translation
                                   - pose_true.translation)
            if rot_err < 1.0 and t_err < 0.01 * pose_true.translation[2]:
                successes += 1
        elapsed = time.perf_counter() - t0
        assert successes >= 99
        assert elapsed < 10.0


class TestBagOfWords:
    def test_hand_computed_weights(self):
        book = Codebook(centroids=np.array([[0.0, 0.0], [10.0, 0.0],
                                            [0.0, 10.0], [10.0, 10.0]]))
        idf = IdfStats(word_doc_counts=np.array([5, 5, 5, 5]),
                       template_count=10)
        descs = np.array([[0.0, 0.0], [0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        bow = compute_bow(descs, book, idf, soft_k=1, sigma=10.0)
        expected = np.array([0.5 * np.log(2.0), 0.25 * np.log(2.0),
                             0.25 * np.log(2.0), 0.0])
        expected /= np.linalg.norm(expected)
        assert np.abs(bow - expected).max() < 1e-9

    def test_word_in_every_template_is_zero(self):
        book = Codebook(centroids=np.array([[0.0], [10.0]]))
        idf = IdfStats(word_doc_counts=np.array([10, 4]), template_count=10)
        bow = compute_bow(np.array([[0.0]]), book, idf, soft_k=1, sigma=10.0)
        assert bow[0] == 0.0

    def test_absent_word_is_zero(self):
        book = Codebook(centroids=np.array([[0.0], [10.0]]))
        idf = IdfStats(word_doc_counts=np.array([2, 3]), template_count=10)
        bow = compute_bow(np.array([[0.0]]), book, idf, soft_k=1, sigma=10.0)
        assert bow[1] == 0.0

    def test_exact_query_ranks_first(self, small_rep):
        result = retrieve(small_rep.templates[7].bow, small_rep, h=3)
        assert result.ranked[0][0] == 7
        assert abs(result.ranked[0][1] - 1.0) < 1e-6


@pytest.fixture(scope="module")
def occlusion_rep(blob):
    cfg = OnboardConfig(
        object_id="blob", n_templates=100, crop_size=140, delta=0.6,
        patch_size=14, pca_dim=32, codebook_size=128, soft_assign_k=3,
        soft_assign_sigma=0.5, seed=0)
    return onboard_object(blob, cfg)


class TestOcclusionRobustness:
    def test_half_occluded_retrieval(self, occlusion_rep, blob):
        rep = occlusion_rep
        rotations = sample_rotations(rep.config["n_templates"],
                                     rep.config["seed"])
        backend = GradientBackend(rep.config["backend_patch_size"])
        S = rep.config["crop_size"]
        hits = 0
        for t in range(100):
            tpl = render_template(blob, rotations[t], S,
                                  rep.config["delta"], t)
            grid = extract_grid(backend, tpl.rgb)
            occluded = tpl.mask.copy()
            occluded[:, :S // 2] = 0
            bow = query_bow(grid, occluded, rep)
            if retrieve(bow, rep, h=1).ranked[0][0] == t:
                hits += 1
        assert hits >= 95


class TestRefinementConvergence:
    def test_jacobian_matches_finite_differences(self):
        from test_refinement import (K, perturb, synthetic_problem)
        from bowpose.refinement import (_apply_increment,
                                        residuals_and_jacobian)
        h = 1e-6
        for seed in range(1, 21):
            fmap, record, pose_true = synthetic_problem(seed)
            rng = np.random.default_rng(seed)
            pose = perturb(pose_true, rng, angle_deg=rng.uniform(0.5, 4.0),
                           depth_frac=rng.uniform(-0.04, 0.04))
            cfg = RefinementConfig()
            _, J = residuals_and_jacobian(pose, record, fmap, K, cfg)
            fd = np.zeros_like(J)
            for p in range(6):
                d = np.zeros(6)
                d[p] = h
                rp, _ = residuals_and_jacobian(_apply_increment(pose, d),
                                               record, fmap, K, cfg)
                rm, _ = residuals_and_jacobian(_apply_increment(pose, -d),
                                               record, fmap, K, cfg)
                fd[:, p] = (rp - rm) / (2 * h)
            assert np.abs(J - fd).max() / max(np.abs(fd).max(), 1e-9) < 1e-3

    def test_recovery_and_monotonicity(self):
        from test_refinement import K, perturb, synthetic_problem
        cfg = RefinementConfig(max_iters=100)
        rot_errs, trans_errs = [], []
        for seed in range(50):
            fmap, record, pose_true = synthetic_problem(seed)
            rng = np.random.default_rng(10_000 + seed)
            init = perturb(pose_true, rng, angle_deg=5.0, depth_frac=0.05)
            out = refine(init, record, fmap, K, cfg)
            assert featuremetric_cost(out, record, fmap, K, cfg) <= \
                featuremetric_cost(init, record, fmap, K, cfg) + 1e-12
            rot_errs.append(rotation_error_deg(out.rotation,
                                               pose_true.rotation))
            trans_errs.append(
                np.linalg.norm(out.translation - pose_true.translation)
                / pose_true.translation[2])
        assert np.percentile(rot_errs, 90) < 0.5
        assert np.percentile(trans_errs, 90) < 0.01


class TestDeskScale:
    def test_fifty_query_views(self, blob):
        t0 = time.perf_counter()
        rep = onboard_object(blob, DESK_CONFIG)
        rotations = sample_rotations(rep.config["n_templates"],
                                     rep.config["seed"])
        rng = np.random.default_rng(7)
        opts = EstimateOptions(
            h=5, ransac_iters=150, refine=True,
            refine_config=RefinementConfig(barron_c=1.0, max_iters=150),
            top_hypotheses=5, seed=0)
        coarse_errs, refined_errs = [], []
        for i in range(50):
            offset = axis_angle(rng.normal(size=3),
                                np.radians(rng.uniform(0.0, 12.0)))
            pose_true = Pose(rotations[i % len(rotations)] @ offset,
                             np.array([rng.uniform(-50, 50),
                                       rng.uniform(-30, 30),
                                       rng.uniform(500, 700)]))
            image, mask = render_scene(blob, pose_true, K_SCENE)
            inp = DetectionInput(image=image, K=K_SCENE, object_id="blob",
                                 mask=mask)
            est = estimate_pose(inp, rep, GradientBackend(14), opts)
            coarse_errs.append(mssd(est.coarse_pose, pose_true, blob))
            refined_errs.append(mssd(est.pose, pose_true, blob))
        elapsed = time.perf_counter() - t0

        coarse_median = float(np.median(coarse_errs))
        refined_median = float(np.median(refined_errs))
        assert refined_median < 0.05 * blob.diameter
        assert refined_median <= coarse_median
        assert elapsed < 120.0


FOUR_SYM = SymmetrySet(transforms=[
    Pose.identity(),
    Pose(axis_angle([0, 0, 1], np.pi / 2), np.zeros(3)),
    Pose(axis_angle([0, 0, 1], np.pi), np.zeros(3)),
    Pose(axis_angle([0, 0, 1], 3 * np.pi / 2), np.zeros(3)),
])


class TestMetricOracles:
    K16 = CameraIntrinsics(fx=20.0, fy=20.0, cx=8.0, cy=8.0,
                           width=16, height=16)

    def _random_pose_pair(self, rng):
        from conftest import random_rotation
        a = Pose(random_rotation(rng),
                 np.array([rng.uniform(-20, 20), rng.uniform(-20, 20),
                           rng.uniform(300, 500)]))
        b = Pose(random_rotation(rng),
                 np.array([rng.uniform(-20, 20), rng.uniform(-20, 20),
                           rng.uniform(300, 500)]))
        return a, b

    def test_mssd_mspd_brute_force(self):
        mesh = cube_mesh()
        K = self.K16
        rng = np.random.default_rng(11)
        for _ in range(200):
            pa, pb = self._random_pose_pair(rng)
            best_3d = np.inf
            best_2d = np.inf
            for s in FOUR_SYM.transforms:
                d3 = 0.0
                d2 = 0.0
                for v in mesh.vertices:
                    e = pa.apply(v[None])[0]
                    g = pb.apply(s.apply(v[None])[0][None])[0]
                    d3 = max(d3, float(np.linalg.norm(e - g)))
                    pe = project(e[None], Pose.identity(), K)[0]
                    pg = project(g[None], Pose.identity(), K)[0]
                    d2 = max(d2, float(np.linalg.norm(pe - pg)))
                best_3d = min(best_3d, d3)
                best_2d = min(best_2d, d2)
            # same arithmetic, different accumulation order: allow the
            # last-ulp wiggle
            assert mssd(pa, pb, mesh, FOUR_SYM) == \
                pytest.approx(best_3d, abs=1e-9)
            assert mspd(pa, pb, mesh, FOUR_SYM, K) == \
                pytest.approx(best_2d, abs=1e-9)

    def _vsd_oracle(self, pe, pg, mesh, K, tau):
        de = render_depth(mesh, pe, K)
        dg = render_depth(mesh, pg, K)
        union = mismatch = far = 0
        for y in range(K.height):
            for x in range(K.width):
                ve, vg = de[y, x] > 0.0, dg[y, x] > 0.0
                if ve or vg:
                    union += 1
                    if ve != vg:
                        mismatch += 1
                    elif abs(de[y, x] - dg[y, x]) > tau:
                        far += 1
        return (mismatch + far) / union if union else 0.0

    def test_vsd_pixel_oracle(self):
        mesh = cube_mesh()
        rng = np.random.default_rng(12)
        for case in range(20):
            pa, pb = self._random_pose_pair(rng)
            tau = rng.uniform(2.0, 40.0)
            assert vsd(pa, pb, mesh, self.K16, tau) == \
                self._vsd_oracle(pa, pb, mesh, self.K16, tau)

    def test_average_recall_identity(self):
        errors = [
            {"object_id": "cube", "vsd": [0.0] * 10, "mssd": 0.0,
             "mspd": 0.0},
            {"object_id": "cube", "vsd": [1.0] * 10, "mssd": np.inf,
             "mspd": np.inf},
            {"object_id": "cube", "vsd": [0.2] * 10, "mssd": 30.0,
             "mspd": 12.0},
        ]
        report = average_recall(errors, {"cube": 200.0}, 640)
        assert report.ar == pytest.approx(
            (report.ar_vsd + report.ar_mssd + report.ar_mspd) / 3.0)
        assert report.ar_vsd == pytest.approx(np.mean(report.recall_vsd))
        assert report.ar_mssd == pytest.approx(np.mean(report.recall_mssd))
        assert report.ar_mspd == pytest.approx(np.mean(report.recall_mspd))


class TestRotationCoverage:
    def test_nearest_neighbor_spacing_at_n800(self):
        R = sample_rotations(800, 0)
        traces = np.einsum('aij,bij->ab', R, R)
        cosang = np.clip((traces - 1.0) / 2.0, -1.0, 1.0)
        ang = np.degrees(np.arccos(cosang))
        np.fill_diagonal(ang, np.inf)
        mean_nn = ang.min(axis=1).mean()
        assert 15.0 <= mean_nn <= 35.0


class TestDeterminism:
    def test_onboard_and_estimate_twice(self, blob, tmp_path):
        digests = []
        results = []
        for run in range(2):
            rep = onboard_object(blob, SMALL_CONFIG)
            path = tmp_path / f"rep{run}"
            save_representation(rep, path)
            digests.append(representation_digest(path))

            rep = load_representation(path)
            R = sample_rotations(SMALL_CONFIG.n_templates,
                                 SMALL_CONFIG.seed)[8]
            pose_true = Pose(R, np.array([30.0, -20.0, 600.0]))
            image, mask = render_scene(blob, pose_true, K_SCENE)
            inp = DetectionInput(image=image, K=K_SCENE, object_id="blob",
                                 mask=mask)
            est = estimate_pose(inp, rep, GradientBackend(14),
                                EstimateOptions(seed=0))
            results.append((est.pose.rotation.tobytes(),
                            est.pose.translation.tobytes(),
                            est.inlier_count))
        assert digests[0] == digests[1]
        assert results[0] == results[1]


class TestExporterConformance:
    """Secondary-component check: exported files against the primary reader."""

    def _exporter(self):
        pytest.importorskip("fpft_exporter")
        from fpft_exporter import FeatureExporter
        return FeatureExporter(seed=0)

    def test_shape_and_stability(self, tmp_path):
        exp = self._exporter()
        rng = np.random.default_rng(5)
        for i in range(3):
            image = rng.uniform(0.0, 1.0, size=(420, 420, 3))
            pa = tmp_path / f"a_{i}.fpft"
            pb = tmp_path / f"b_{i}.fpft"
            exp.export_to_file(image, pa)
            exp.export_to_file(image, pb)
            grid = read_feature_file(pa)
            assert grid.data.shape == (30, 30, 1024)
            assert grid.patch_size == 14
            assert pa.read_bytes() == pb.read_bytes()

    def test_grid_layout_matches_patch_ordering(self, tmp_path):
        exp = self._exporter()
        image = np.zeros((420, 420, 3))
        row, col = 7, 3
        image[row * 14:(row + 1) * 14, col * 14:(col + 1) * 14] = 1.0
        path = tmp_path / "bright.fpft"
        exp.export_to_file(image, path)
        grid = read_feature_file(path)
        norms = np.linalg.norm(grid.data, axis=2)
        assert np.unravel_index(np.argmax(norms), norms.shape) == (row, col)
