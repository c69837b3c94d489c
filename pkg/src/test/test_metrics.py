import floorba as fb
import numpy as np
import pytest
from pytest import approx, raises


def plane_points(M, noise=0., seed=0):
    """M points on the 2 m x 2 m square y=0, with Gaussian noise along y"""
    rng = np.random.default_rng(seed)
    return np.stack((rng.uniform(-1., 1., M), noise*rng.standard_normal(M),
            rng.uniform(-1., 1., M)), axis=1)


@pytest.fixture(scope='module')
def corners():
    """Float-depth frames of a 4 m x 3 m room looking into its corners"""
    fp = fb.floorplan.Floorplan2D([[0., 0., 4., 0.], [4., 0., 4., 3.],
            [4., 3., 0., 3.], [0., 3., 0., 0.]])
    spec = fb.synth.SceneSpec(frames=8, quantize=False, pitch_deg=-30.)
    centers = np.array([[2., 1.4, 1.5], [1.8, 1.4, 1.4]])
    corner = np.array([[4., 3.], [0., 3.], [0., 0.], [4., 0.]])
    R = []
    t = []
    for cc in centers:
        for uv in corner:
            heading = np.arctan2(uv[0] - cc[0], uv[1] - cc[2])
            R.append(fb.synth.camera_rotation(heading, np.radians(spec.pitch_deg)))
            t.append(cc)
    trajectory = fb.geometry.PoseArray.from_matrices(np.array(R), np.array(t))
    scene,frames = fb.synth.generate_scene(fp, spec, trajectory)
    return scene, frames


class TestEntropy:
    def test_gaussian(self):
        # With a radius that takes in the whole cloud, every neighborhood
        # is the full Gaussian sample
        sigma = 0.05
        rng = np.random.default_rng(1)
        pts = sigma * rng.standard_normal((5000,3))
        h = fb.metrics.mme(pts, radius=10., min_points=5, max_points=20)
        expect = 1.5*np.log(2*np.pi*np.e*sigma**2)
        assert h == approx(expect, rel=0.05)

    def test_flat_is_excluded(self):
        with raises(fb.utility.FBAnalysisError):
            fb.metrics.mme(plane_points(500), radius=0.3, min_points=5)

    def test_empty(self):
        with raises(fb.utility.FBAnalysisError):
            fb.metrics.mme(np.zeros((0,3)), radius=0.1)


class TestPlaneVariance:
    def test_exact_plane(self):
        v = fb.metrics.mpv(plane_points(3000), radius=0.2, min_points=5)
        assert v < 1e-12

    def test_noise(self):
        sigma = 0.01
        v = fb.metrics.mpv(plane_points(5000, sigma), radius=0.2, min_points=20,
                max_points=500)
        assert v == approx(sigma**2, rel=0.2)

    def test_sparse(self):
        with raises(fb.utility.FBAnalysisError):
            fb.metrics.mpv(plane_points(50), radius=0.01, min_points=5)

    def test_translation_invariant(self):
        pts = plane_points(2000, 0.01)
        a = fb.metrics.mpv(pts, radius=0.2, min_points=5, max_points=200)
        b = fb.metrics.mpv(pts + [1000., -500., 250.], radius=0.2, min_points=5,
                max_points=200)
        assert a == approx(b, rel=1e-6)

    def test_accepts_clouds(self):
        pts = plane_points(1000, 0.01)
        assert fb.metrics.mpv(fb.geometry.PointCloud(pts), radius=0.2) == \
                fb.metrics.mpv(pts, radius=0.2)


class TestRansac:
    @pytest.fixture
    def corner(self):
        rng = np.random.default_rng(4)
        a,b = rng.uniform(0.05, 1., (2,300))
        pts = np.concatenate((
                np.stack((np.zeros(300), a, b), axis=1),
                np.stack((a, np.zeros(300), b), axis=1),
                np.stack((a, b, np.zeros(300)), axis=1)))
        normals = np.repeat(np.eye(3), 300, axis=0)
        return pts, normals

    def test_single_plane(self):
        pts = plane_points(200)
        plane,inl = fb.metrics.ransac_plane(pts, rng=np.random.default_rng(0))
        assert inl.size == 200
        assert abs(plane.normal[1]) == approx(1.)

    def test_too_few(self):
        plane,inl = fb.metrics.ransac_plane(np.zeros((2,3)))
        assert plane is None and inl.size == 0

    def test_corner(self, corner):
        pts,normals = corner
        planes = fb.metrics.orthogonal_planes(pts, normals, rng=np.random.default_rng(0))
        assert len(planes) == 3
        N = np.array([p.normal for p,_ in planes])
        assert np.abs(N @ N.T) == approx(np.eye(3), abs=1e-6)
        assert sorted(inl.size for _,inl in planes) == [300, 300, 300]

    def test_no_triple(self):
        pts = np.concatenate((plane_points(300, seed=1), plane_points(300, seed=2) + [0., 1., 0.]))
        assert fb.metrics.orthogonal_planes(pts, rng=np.random.default_rng(0)) is None


class TestOrthogonalPlanes:
    def test_ground_truth_is_flat(self, corners):
        scene,frames = corners
        info = {}
        m = fb.metrics.mom(frames, scene.trajectory, info=info)
        assert m < 1e-5
        assert len(info['mom_frames_used']) == len(frames)
        assert info['mom_frames_skipped'] == []

    def test_drift_raises_mom(self, corners):
        scene,frames = corners
        drifted = fb.synth.perturb_poses(scene.trajectory, 1., 0.02, seed=3)
        assert fb.metrics.mom(frames, drifted) > fb.metrics.mom(frames, scene.trajectory)

    def test_pose_count(self, corners):
        scene,frames = corners
        with raises(fb.utility.FBDataError):
            fb.metrics.mom(frames[:3], scene.trajectory)


class TestReferenceMetrics:
    def test_nnd_offset(self):
        u,v = np.meshgrid(np.arange(21)*0.05, np.arange(21)*0.05)
        grid = np.stack((u.ravel(), np.zeros(u.size), v.ravel()), axis=1)
        assert fb.metrics.nnd(grid, grid) == 0.
        assert fb.metrics.nnd(grid + [0., 0.1, 0.], grid) == approx(0.1)

    def test_nnd_directed(self):
        a = np.array([[0., 0., 0.]])
        b = np.array([[0., 0., 0.], [5., 0., 0.]])
        assert fb.metrics.nnd(a, b) == 0.
        assert fb.metrics.nnd(b, a) == approx(2.5)

    def test_nsd(self):
        fp = fb.floorplan.Floorplan2D([[0., 0., 4., 0.], [4., 0., 4., 3.],
                [4., 3., 0., 3.], [0., 3., 0., 0.]])
        pts = np.array([[2., 0.5, 0.2], [3.8, 1.2, 1.5], [1., 2., 2.8], [0.2, 0.1, 1.5]])
        assert fb.metrics.nsd(pts, fp) == approx(0.2)

    def test_nsd_empty(self):
        fp = fb.floorplan.Floorplan2D([[0., 0., 1., 0.]])
        with raises(fb.utility.FBAnalysisError):
            fb.metrics.nsd(np.zeros((0,3)), fp)


class TestATE:
    @pytest.fixture
    def reference(self):
        rng = np.random.default_rng(9)
        return rng.uniform(-2., 2., (12,3))

    def test_rigid_motion_removed(self, reference):
        R = fb.geometry.rot_y(0.7) @ fb.geometry.rotation_between([0., 1., 0.], [0.1, 1., 0.])
        moved = reference @ R.T + [1., -2., 0.5]
        assert fb.metrics.ate(moved, reference) == approx(0., abs=1e-9)
        assert fb.metrics.ate(moved, reference, align=False) > 0.5

    def test_offset_without_alignment(self, reference):
        assert fb.metrics.ate(reference + [0.3, 0., 0.4], reference, align=False) == approx(0.5)

    def test_alignment_never_hurts(self, reference):
        rng = np.random.default_rng(10)
        noisy = reference + 0.05*rng.standard_normal(reference.shape)
        assert fb.metrics.ate(noisy, reference) <= fb.metrics.ate(noisy, reference, align=False)

    def test_pose_arrays(self):
        poses = fb.geometry.PoseArray.identity(3).retract(
                np.hstack((np.zeros((3,3)), np.eye(3))))
        assert fb.metrics.ate(poses, poses) == approx(0., abs=1e-12)

    def test_lengths(self, reference):
        with raises(fb.utility.FBDataError):
            fb.metrics.ate(reference[:5], reference)


class TestReport:
    def test_write_read(self, tmp_path):
        report = fb.metrics.MetricsReport(mme=-4.5, mpv=1.25e-5, nsd=0.03,
                parameters={'radius':0.1, 'points':1200})
        path = str(tmp_path / 'metrics.txt')
        report.write(path)
        again = fb.metrics.MetricsReport.read(path)
        assert again.mme == -4.5
        assert again.mpv == 1.25e-5
        assert again.mom is None and again.ate is None
        assert again['nsd'] == 0.03
        assert again.parameters['points'] == '1200'

    def test_negative(self):
        with raises(fb.utility.FBDataError):
            fb.metrics.MetricsReport(mpv=-1.)

    def test_compute(self, corners):
        scene,frames = corners
        report = fb.metrics.compute_metrics(frames, scene.trajectory, scene.floorplan,
                reference_poses=scene.trajectory)
        assert report.mme is not None
        assert report.mpv is not None
        assert report.mom < 1e-5
        assert report.nsd < 1e-6
        assert report.ate == approx(0., abs=1e-9)
        assert report.nnd is None
        assert report.parameters['points'] > 0

    def test_skip(self, corners):
        scene,frames = corners
        report = fb.metrics.compute_metrics(frames, scene.trajectory, skip=('mme', 'mom'))
        assert report.mme is None and report.mom is None
        assert report.mpv is not None
