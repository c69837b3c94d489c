import floorba as fb
import numpy as np
import pytest
from pytest import approx, raises


# An L-shaped room, so that no half or quarter turn maps it onto itself
lroom = fb.floorplan.Floorplan2D([
        [0., 0., 6., 0.],
        [6., 0., 6., 2.],
        [6., 2., 3., 2.],
        [3., 2., 3., 4.],
        [3., 4., 0., 4.],
        [0., 4., 0., 0.]])

CEILING = 2.5
TRUE_YAW = 0.4
TRUE_SHIFT = [1., 0., -2.]


def floor_samples(density, y, normal, seed):
    """Points on the L-shaped floor area at height y"""
    rng = np.random.default_rng(seed)
    M = int(6*4*density)
    uv = rng.uniform([0., 0.], [6., 4.], (M,2))
    uv = uv[(uv[:,1] <= 2.) | (uv[:,0] <= 3.)]
    pts = np.stack((uv[:,0], np.full(len(uv), y), uv[:,1]), axis=1)
    return pts, np.tile(normal, (len(uv),1))


@pytest.fixture(scope='module')
def model():
    """Walls, floor, and ceiling of the room in floorplan coordinates"""
    fp3d = fb.floorplan.build_floorplan3d(lroom, 0., CEILING, density=100., seed=3)
    walls = fp3d.points
    wall_normals = fp3d.normals[fp3d.segment_id]
    floor,floor_n = floor_samples(300., 0., [0., 1., 0.], 4)
    ceil,ceil_n = floor_samples(150., CEILING, [0., -1., 0.], 5)
    return fb.geometry.PointCloud(np.concatenate((walls, floor, ceil)),
            normals=np.concatenate((wall_normals, floor_n, ceil_n)))


@pytest.fixture(scope='module')
def scan(model):
    """The model seen in scan coordinates"""
    T = fb.align.SimilarityTransform(TRUE_YAW, 1., TRUE_SHIFT)
    A,b = T.affine()
    return model.transformed(A, b)


class TestSimilarityTransform:
    @pytest.fixture
    def T(self):
        level = fb.geometry.rotation_between([0.1, -1., 0.05], [0., -1., 0.])
        return fb.align.SimilarityTransform(0.7, 1.3, [0.5, 9., -1.], level)

    def test_shift_is_horizontal(self, T):
        assert T.shift[1] == 0.

    def test_bad_scale(self):
        with raises(fb.utility.FBParamError):
            fb.align.SimilarityTransform(scale=0.)

    def test_inverse_apply(self, T):
        p = np.array([[1., 2., 3.], [-0.5, 0., 4.]])
        assert T.inverse_apply(T.apply(p)) == approx(p)

    def test_inverse(self):
        T = fb.align.SimilarityTransform(-1.2, 0.8, [2., 0., 3.])
        p = np.array([[1., 2., 3.], [-0.5, 0., 4.]])
        assert T.inverse().apply(T.apply(p)) == approx(p)

    def test_leveled_inverse(self, T):
        assert not T.is_level
        with raises(fb.utility.FBParamError):
            T.inverse()

    def test_apply_xz(self):
        T = fb.align.SimilarityTransform(0.7, 1.3, [0.5, 0., -1.])
        uv = np.array([[1., 2.], [3., -4.]])
        p = np.stack((uv[:,0], np.zeros(2), uv[:,1]), axis=1)
        assert T.apply_xz(uv) == approx(T.apply(p)[:,[0,2]])

    def test_items(self, T, tmp_path):
        path = str(tmp_path / 'transform.txt')
        fb.dat.write_report(path, T.to_items())
        again = fb.align.SimilarityTransform.from_items(fb.dat.load_report(path))
        assert again.yaw == T.yaw
        assert again.scale == T.scale
        assert np.array_equal(again.level, T.level)
        assert again.shift == approx(T.shift)

    def test_items_angle_unit(self, T):
        assert dict(T.to_items())['yaw_deg'] == approx(np.degrees(T.yaw))
        try:
            fb.config['unit_angle'] = 'rev'
            items = dict(T.to_items())
        finally:
            fb.config.restore_default('unit_angle')
        assert items['yaw_rev'] == approx(T.yaw / (2*np.pi))
        assert 'yaw_deg' not in items

    def test_bad_items(self):
        with raises(fb.utility.FBFileError):
            fb.align.SimilarityTransform.from_items({'yaw':'0.1', 'shift':'0 0 0'})


class TestSphere:
    @pytest.mark.parametrize('level,count', [(0, 12), (1, 42), (4, 2562)])
    def test_counts(self, level, count):
        V = fb.align.icosphere(level)
        assert V.shape == (count, 3)
        assert np.linalg.norm(V, axis=1) == approx(np.ones(count))


class TestGravity:
    def test_floor_wins(self, scan):
        g,confident = fb.align.estimate_gravity(scan)
        assert confident
        assert g == approx([0., -1., 0.], abs=1e-9)

    def test_tilted_scan(self, model):
        R = fb.geometry.rotation_between([0., 1., 0.], [0.2, 1., -0.1])
        g,_ = fb.align.estimate_gravity(model.transformed(R))
        assert g == approx(R @ [0., -1., 0.], abs=1e-9)

    def test_up_prior(self, scan):
        g,_ = fb.align.estimate_gravity(scan, up_prior=[0.05, 1., 0.])
        assert g == approx([0., -1., 0.], abs=1e-9)

    def test_needs_normals(self):
        with raises(fb.utility.FBParamError):
            fb.align.estimate_gravity(fb.geometry.PointCloud(np.zeros((200,3))))

    def test_too_few(self):
        cloud = fb.geometry.PointCloud(np.zeros((20,3)), normals=np.tile([0., 1., 0.], (20,1)))
        with raises(fb.utility.FBAnalysisError):
            fb.align.estimate_gravity(cloud)

    def test_leveling(self):
        assert fb.align.leveling_rotation([0., -1., 0.]) == approx(np.eye(3))
        g = np.array([0.2, -1., 0.])
        L = fb.align.leveling_rotation(g)
        assert L @ (g / np.linalg.norm(g)) == approx([0., -1., 0.])

    def test_leveling_tolerance(self):
        g = [np.sin(np.radians(0.5)), -np.cos(np.radians(0.5)), 0.]
        assert fb.align.leveling_rotation(g, tolerance_deg=1.) == approx(np.eye(3))


class TestBoundary:
    def test_floor_and_ceiling_removed(self, scan):
        boundary,floor_y = fb.align.build_boundary_scan(scan)
        assert floor_y == approx(0., abs=0.02)
        y = boundary.points[:,1]
        assert y.min() >= floor_y + fb.config['floor_margin']
        assert y.max() <= CEILING - fb.config['floor_margin']
        # what is left lies on the walls
        uv = fb.align.SimilarityTransform(TRUE_YAW, 1., TRUE_SHIFT).inverse_apply(
                boundary.points)[:,[0,2]]
        assert fb.floorplan.nearest_segment_distance(uv, lroom).max() < 1e-9

    def test_furniture_removed(self, scan):
        rng = np.random.default_rng(7)
        T = fb.align.SimilarityTransform(TRUE_YAW, 1., TRUE_SHIFT)
        # a low table fails the span test
        table = rng.uniform([-0.5, 0.6, -0.5], [0.5, 0.8, 0.5], (500,3))
        center = T.apply([[1.5, 0., 1.]])
        table = table + center
        # a door frame post spans the room but holds only a few points
        post = T.apply([[4.5, 0.3, 1.], [4.5, 1.2, 1.], [4.5, 2.2, 1.]])
        cloud = fb.geometry.PointCloud(np.concatenate((scan.points, table, post)))
        boundary,_ = fb.align.build_boundary_scan(cloud)
        assert len(boundary) > 0
        xz = boundary.points[:,[0,2]]
        assert not np.any(np.all(np.abs(xz - center[0,[0,2]]) < 0.4, axis=1))
        assert not np.any(np.all(np.abs(xz - post[0,[0,2]]) < 0.05, axis=1))

    def test_sparse_cells(self, capsys):
        fp3d = fb.floorplan.build_floorplan3d(lroom, 0., CEILING, density=100., seed=3)
        walls = fb.align.SimilarityTransform(TRUE_YAW, 1., TRUE_SHIFT).apply(fp3d.points)
        # no floor and no ceiling, so only the cell filter acts
        boundary,_ = fb.align.build_boundary_scan(fb.geometry.PointCloud(walls),
                require_floor=False)
        cell = fb.config['occupancy_cell']
        ij = np.floor(walls[:,[0,2]] / cell).astype(np.int64)
        cells,inv,count = np.unique(ij, axis=0, return_inverse=True, return_counts=True)
        inv = inv.reshape(-1)
        top = np.full(len(cells), -np.inf)
        bottom = np.full(len(cells), np.inf)
        np.maximum.at(top, inv, walls[:,1])
        np.minimum.at(bottom, inv, walls[:,1])
        height = walls[:,1].max() - walls[:,1].min()
        wall = top - bottom >= fb.config['furniture_fraction'] * height
        cut = np.percentile(count[wall], fb.config['furniture_percentile'])
        expected = wall & (count >= cut)
        assert 0 < np.count_nonzero(expected) < len(cells)
        assert len(boundary) == np.count_nonzero(expected[inv])
        kept = {tuple(c) for c in np.floor(boundary.points[:,[0,2]] / cell).astype(np.int64)}
        assert kept == {tuple(c) for c in cells[expected]}

    def test_no_floor(self, capsys):
        rng = np.random.default_rng(8)
        cloud = fb.geometry.PointCloud(rng.uniform(0., 2., (2000,3)))
        with raises(fb.utility.FBAnalysisError):
            fb.align.build_boundary_scan(cloud)
        assert 'FB ERR' in capsys.readouterr().out

    def test_no_floor_allowed(self, capsys):
        rng = np.random.default_rng(8)
        cloud = fb.geometry.PointCloud(rng.uniform(0., 2., (2000,3)))
        boundary,floor_y = fb.align.build_boundary_scan(cloud, require_floor=False)
        assert floor_y is None
        assert len(boundary) > 0
        assert 'FB WARN' in capsys.readouterr().out

    def test_empty(self):
        with raises(fb.utility.FBAnalysisError):
            fb.align.build_boundary_scan(fb.geometry.PointCloud(np.zeros((0,3))))


class TestDirections:
    def test_two_directions(self):
        n = np.concatenate((np.tile(fb.geometry.rot_y(0.3) @ [1., 0., 0.], (100,1)),
                np.tile(fb.geometry.rot_y(0.3) @ [0., 0., -1.], (60,1)),
                np.tile([0., 1., 0.], (500,1))))
        phi1,phi2 = fb.align.horizontal_directions(n)
        assert phi1 == approx(0.3)
        assert phi2 == approx(0.3 + np.pi/2)

    def test_single_direction(self):
        with raises(fb.utility.FBAnalysisError):
            fb.align.horizontal_directions(np.tile([1., 0., 0.], (100,1)))

    def test_floorplan_direction(self):
        fp3d = fb.floorplan.build_floorplan3d(lroom, 0., 1., density=1.)
        # the x-running walls are longer, and their normals lie along z
        assert fb.align.floorplan_direction(fp3d) == approx(np.pi/2)


class TestScaleShift:
    @pytest.fixture(scope='class')
    def walls(self):
        """Floorplan walls and their image under a scaled transform"""
        fp3d = fb.floorplan.build_floorplan3d(lroom, 0., CEILING, density=100., seed=3)
        T = fb.align.SimilarityTransform(TRUE_YAW, 1.5, TRUE_SHIFT)
        boundary = fb.geometry.PointCloud(T.apply(fp3d.points),
                normals=fp3d.normals[fp3d.segment_id] @ fb.geometry.rot_y(TRUE_YAW).T)
        return fp3d, boundary

    def test_scale_and_shift(self, walls):
        fp3d,boundary = walls
        T = fb.align.estimate_scale_shift(boundary, fp3d, TRUE_YAW, align_scale=True)
        assert T.yaw == TRUE_YAW
        assert T.scale == approx(1.5, rel=0.03)
        assert T.shift == approx(TRUE_SHIFT, abs=0.1)

    def test_fixed_scale(self, walls):
        fp3d,boundary = walls
        T = fb.align.estimate_scale_shift(boundary, fp3d, TRUE_YAW, align_scale=False)
        assert T.scale == 1.
        assert T.shift[1] == 0.

    def test_flat_scan(self, walls, capsys):
        fp3d,_ = walls
        line = fb.geometry.PointCloud([[1., 0., 0.], [1., 1., 2.], [1., 2., 4.]])
        with raises(fb.utility.FBAnalysisError):
            fb.align.estimate_scale_shift(line, fp3d, 0.)
        assert 'FB ERR' in capsys.readouterr().out

    def test_estimate_yaw(self, walls):
        fp3d,boundary = walls
        yaw = fb.align.estimate_yaw(boundary, fp3d, align_scale=True)
        assert np.mod(yaw - TRUE_YAW + np.pi, 2*np.pi) - np.pi == approx(0., abs=1e-6)


class TestAlign:
    def test_recovers_transform(self, scan):
        result = fb.align.align(scan, lroom)
        T = result.transform
        assert T.is_level
        assert np.mod(T.yaw - TRUE_YAW + np.pi, 2*np.pi) - np.pi == approx(0., abs=1e-6)
        assert T.scale == approx(1., rel=0.03)
        assert T.shift == approx(TRUE_SHIFT, abs=0.1)
        d = result.diagnostics
        assert d['gravity_confident']
        assert len(d['candidate_cost']) == 4
        assert d['residual'] == min(d['candidate_cost'])

    def test_floorplan_lands_on_walls(self, scan):
        result = fb.align.align(scan, lroom)
        tree = result.floorplan3d.tree
        boundary = result.boundary.points
        d,_ = tree.query(boundary)
        assert np.median(d) < 0.1

    def test_known_transform(self, scan):
        fixed = fb.align.SimilarityTransform(TRUE_YAW, 1., TRUE_SHIFT)
        result = fb.align.align(scan, lroom, gravity=[0., -1., 0.], transform=fixed)
        assert result.transform.yaw == TRUE_YAW
        assert 'candidate_cost' not in result.diagnostics

    def test_empty(self):
        with raises(fb.utility.FBAnalysisError):
            fb.align.align(fb.geometry.PointCloud(np.zeros((0,3))), lroom)

    def test_randomized_trials(self, model):
        """Random yaw, scale in [0.5, 2], and shift in [-5, 5] m"""
        rng = np.random.default_rng(21)
        # The room around its own origin
        center = np.array([3., 2.])
        room = fb.floorplan.Floorplan2D(np.hstack((lroom.a - center, lroom.b - center)))
        points = model.points - [center[0], 0., center[1]]
        passed = 0
        for trial in range(20):
            yaw = rng.uniform(-np.pi, np.pi)
            scale = rng.uniform(0.5, 2.)
            shift = np.array([rng.uniform(-5., 5.), 0., rng.uniform(-5., 5.)])
            T = fb.align.SimilarityTransform(yaw, scale, shift)
            scan = fb.geometry.PointCloud(T.apply(points),
                    normals=model.normals @ fb.geometry.rot_y(yaw).T)
            try:
                found = fb.align.align(scan, room).transform
            except fb.utility.FBAnalysisError:
                continue
            dyaw = np.mod(found.yaw - yaw + np.pi, 2*np.pi) - np.pi
            if abs(dyaw) <= np.radians(1.) and abs(found.scale/scale - 1.) <= 0.02 \
                    and np.linalg.norm(found.shift - shift) <= 0.05:
                passed += 1
        assert passed >= 19
