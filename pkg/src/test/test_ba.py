import floorba as fb
import numpy as np
import io
import time
import pytest
from pytest import approx, raises


FX, FY, CX, CY = 100., 100., 50., 40.

# A 6 m x 5 m room around the cameras
room = [[-3., -1., 3., -1.],
        [3., -1., 3., 4.],
        [3., 4., -3., 4.],
        [-3., 4., -3., -1.]]


def camera_points(poses, index, world):
    """World points expressed in the frames that observe them"""
    R = poses.matrices()[index]
    return np.einsum('mji,mj->mi', R, world - poses.translations[index])


def check(fn, poses, text, report):
    # Sign cancellations leave some components at zero; their finite
    # differences only carry round-off
    return fb.utility.gradtest(fn, poses, 1e-4, text, report, floor=1e-5)


def project(p):
    return np.stack((FX*p[:,0]/p[:,2] + CX, FY*p[:,1]/p[:,2] + CY), axis=1)


def make_frames(N):
    intr = fb.geometry.CameraIntrinsics(FX, FY, CX, CY, depth_scale=1.)
    return [fb.dat.Frame(kk, np.zeros((80,100)), np.zeros((80,100), dtype=np.uint8), intr)
            for kk in range(N)]


def make_clouds(poses, floor_index, floor_world, wall_index, wall_world):
    cam_floor = camera_points(poses, floor_index, floor_world)
    cam_walls = camera_points(poses, wall_index, wall_world)
    def prov(index):
        return np.stack((index, np.zeros_like(index), np.zeros_like(index)), axis=1)
    floor = fb.geometry.PointCloud(poses.apply(floor_index, cam_floor), provenance=prov(floor_index))
    walls = fb.geometry.PointCloud(poses.apply(wall_index, cam_walls), provenance=prov(wall_index))
    index = np.concatenate((floor_index, wall_index))
    cam = np.concatenate((cam_floor, cam_walls))
    full = fb.geometry.PointCloud(poses.apply(index, cam), provenance=prov(index))
    return fb.clouds.SemanticClouds(full, floor, walls,
            {'full':cam, 'floor':cam_floor, 'walls':cam_walls}, 1)


def make_matches(poses, K, rng, noise):
    N = len(poses)
    fa = np.arange(K) % N
    fb_ = (fa + 1 + rng.integers(0, N-1, K)) % N
    pa = rng.uniform([-1., -1., 2.], [1., 1., 4.], (K,3))
    world = poses.apply(fa, pa) + noise*rng.standard_normal((K,3))
    pb = camera_points(poses, fb_, world)
    return fb.ba.MatchSet(fa, pa, fb_, pb,
            project(pa) + 2*noise*rng.standard_normal((K,2)),
            project(pb) + 2*noise*rng.standard_normal((K,2)),
            np.tile([FX, FY, CX, CY], (N,1)))


@pytest.fixture(scope='module')
def instance():
    """A random five-frame problem with residuals in every term"""
    rng = np.random.default_rng(0)
    N = 5
    poses = fb.geometry.PoseArray.identity(N).retract(np.hstack((
            0.05*rng.standard_normal((N,3)), 0.3*rng.standard_normal((N,3)))))
    matches = make_matches(poses, 30, rng, 0.05)
    floor_index = np.arange(40) % N
    # All floor points lie above the plane
    floor_world = np.stack((rng.uniform(-2, 2, 40), -0.8 + 0.05*rng.standard_normal(40),
            rng.uniform(0, 3, 40)), axis=1)
    fp = fb.floorplan.Floorplan2D(room)
    fp3d = fb.floorplan.build_floorplan3d(fp, -1.2, 1.3, density=40., seed=1)
    wall_index = np.arange(60) % N
    seg = rng.integers(0, 4, 60)
    s = rng.uniform(0.1, 0.9, 60)
    uv = fp.a[seg] + s[:,np.newaxis]*(fp.b[seg] - fp.a[seg]) + 0.05*rng.standard_normal((60,2))
    wall_world = np.stack((uv[:,0], rng.uniform(-1., 1., 60), uv[:,1]), axis=1)
    clouds = make_clouds(poses, floor_index, floor_world, wall_index, wall_world)
    floor_model = fb.ba.FloorModel(fb.geometry.Plane([0.05, 1., -0.03], 1.2))
    assignment = fb.ba.FixedWallAssignment(np.arange(0, 60, 2), seg[::2])
    state = fb.ba.BAState(make_frames(N), matches, clouds, fp3d, floor_model, assignment, fp)
    return {'poses':poses, 'matches':matches, 'clouds':clouds, 'fp3d':fp3d,
            'floor_model':floor_model, 'assignment':assignment, 'state':state}


@pytest.fixture(scope='module')
def exact():
    """Matches that coincide, a floor at y=0, and walls on the floorplan"""
    rng = np.random.default_rng(7)
    N = 4
    poses = fb.geometry.PoseArray.identity(N).retract(np.hstack((
            0.05*rng.standard_normal((N,3)), 0.3*rng.standard_normal((N,3)))))
    matches = make_matches(poses, 20, rng, 0.)
    floor_index = np.arange(30) % N
    floor_world = np.stack((rng.uniform(-2, 2, 30), np.zeros(30), rng.uniform(0, 3, 30)), axis=1)
    fp = fb.floorplan.Floorplan2D(room)
    fp3d = fb.floorplan.build_floorplan3d(fp, 0., 2.5, density=50., seed=2)
    wall_index = np.arange(40) % N
    seg = np.arange(40) % 4
    s = rng.uniform(0.3, 0.7, 40)
    uv = fp.a[seg] + s[:,np.newaxis]*(fp.b[seg] - fp.a[seg])
    wall_world = np.stack((uv[:,0], rng.uniform(0.5, 2., 40), uv[:,1]), axis=1)
    clouds = make_clouds(poses, floor_index, floor_world, wall_index, wall_world)
    return {'poses':poses, 'matches':matches, 'clouds':clouds, 'fp3d':fp3d,
            'frames':make_frames(N), 'floorplan':fp}


class TestGradients:
    @pytest.fixture(params=['geometric', 'reprojection', 'ray', 'floor',
            'nearest_point', 'iterative_nearest_wall', 'fixed_nearest_wall'])
    def term(self, request, instance):
        ms = instance['matches']
        clouds = instance['clouds']
        fp3d = instance['fp3d']
        return request.param, {
            'geometric': lambda p: fb.ba.geometric_loss(ms, p),
            'reprojection': lambda p: fb.ba.reprojection_loss(ms, p),
            'ray': lambda p: fb.ba.ray_distance_loss(ms, p),
            'floor': lambda p: fb.ba.floor_loss(clouds, p, instance['floor_model']),
            'nearest_point': lambda p: fb.ba.walls_loss_nearest_point(clouds, p, fp3d),
            'iterative_nearest_wall': lambda p: fb.ba.walls_loss_iterative_nearest_wall(clouds, p, fp3d),
            'fixed_nearest_wall': lambda p: fb.ba.walls_loss_fixed_nearest_wall(
                    clouds, p, instance['assignment'], fp3d),
            }[request.param]

    def test_term(self, term, instance):
        name,fn = term
        value,grad = fn(instance['poses'])
        assert value > 0.
        assert grad.shape == (5,6)
        report = io.StringIO()
        assert check(fn, instance['poses'], name, report), report.getvalue()

    @pytest.mark.parametrize('strategy', fb.ba.STRATEGIES)
    @pytest.mark.parametrize('geom', fb.ba.GEOM_TERMS)
    def test_total(self, instance, strategy, geom):
        cfg = fb.ba.BAConfig(walls_strategy=strategy, geom_term=geom)
        state = instance['state']
        def fn(p):
            return fb.ba.total_loss(state, cfg, p)[:2]
        report = io.StringIO()
        assert check(fn, instance['poses'], strategy, report), report.getvalue()

    def test_inequality_hinge(self, instance):
        cfg = fb.ba.BAConfig(lambda_floor=0., lambda_walls=0.)
        state = fb.ba.BAState(**{k:getattr(instance['state'], k) for k in
                ('frames', 'matches', 'clouds', 'fp3d', 'floor_model', 'assignment')})
        loss,grad,terms = fb.ba.total_loss(state, cfg, instance['poses'])
        state.geom_bound = 0.5*terms['geom']
        loss2,grad2,_ = fb.ba.total_loss(state, cfg, instance['poses'])
        assert loss2 == approx(loss + 100.*0.5*terms['geom'])
        assert grad2 == approx(101.*grad)
        report = io.StringIO()
        assert check(lambda p: fb.ba.total_loss(state, cfg, p)[:2],
                instance['poses'], 'hinge', report), report.getvalue()


class TestTotalLoss:
    def test_zero_weights(self, instance):
        cfg = fb.ba.BAConfig(lambda_floor=0., lambda_walls=0.)
        loss,grad,terms = fb.ba.total_loss(instance['state'], cfg, instance['poses'])
        value,G = fb.ba.geometric_loss(instance['matches'], instance['poses'])
        assert loss == approx(value / 30.)
        assert grad == approx(G / 30.)
        assert terms['floor'] == 0. and terms['walls'] == 0.

    def test_sum_reduction(self, instance):
        cfg = fb.ba.BAConfig(reduction='sum', lambda_floor=2., lambda_walls=0.5,
                walls_strategy='nearest_point')
        loss,_,terms = fb.ba.total_loss(instance['state'], cfg, instance['poses'])
        geom,_ = fb.ba.geometric_loss(instance['matches'], instance['poses'])
        floor,_ = fb.ba.floor_loss(instance['clouds'], instance['poses'], instance['floor_model'])
        walls,_ = fb.ba.walls_loss_nearest_point(instance['clouds'], instance['poses'], instance['fp3d'])
        assert terms['geom'] == approx(geom)
        assert loss == approx(geom + 2.*floor + 0.5*walls)

    def test_counts(self, instance):
        state = instance['state']
        assert state.counts(fb.ba.BAConfig()) == {'geom':30, 'floor':40, 'walls':30}
        assert state.counts(fb.ba.BAConfig(walls_strategy='np', geom_term='reprojection')) == \
                {'geom':60, 'floor':40, 'walls':60}

    def test_reprojection_behind_camera(self, instance):
        ms = instance['matches']
        flipped = fb.ba.MatchSet(ms.frame_a, -ms.pa, ms.frame_b, -ms.pb,
                ms.obs_a, ms.obs_b, ms.intrinsics)
        value,grad = fb.ba.reprojection_loss(flipped, instance['poses'])
        assert value == 0.
        assert np.all(grad == 0.)

    def test_empty_floor_warns(self, instance, capsys):
        value,grad = fb.ba.floor_loss(instance['clouds'], instance['poses'], None)
        assert value == 0.
        assert 'floor term is empty' in capsys.readouterr().out


class TestFixedPoint:
    def test_zero_loss(self, exact):
        state = fb.ba.BAState(exact['frames'], exact['matches'], exact['clouds'],
                exact['fp3d'], fb.ba.FloorModel.fit(exact['clouds'].floor.points))
        cfg = fb.ba.BAConfig(walls_strategy='inw', geom_term='point')
        loss,grad,terms = fb.ba.total_loss(state, cfg, exact['poses'])
        assert loss < 1e-9
        assert np.all(grad == 0.)

    def test_poses_unchanged(self, exact):
        cfg = fb.ba.BAConfig(walls_strategy='inw', max_steps=20, realign_period=0)
        poses,log = fb.ba.optimize_poses(exact['frames'], exact['matches'],
                exact['clouds'], exact['fp3d'], cfg, exact['poses'])
        assert len(log) == 20
        assert log.loss[0] < 1e-9
        assert poses.translations == approx(exact['poses'].translations, abs=1e-12)
        assert poses.matrices() == approx(exact['poses'].matrices(), abs=1e-12)


class TestDescent:
    def test_monotone(self, instance):
        cfg = fb.ba.BAConfig(lambda_floor=0., lambda_walls=0.)
        state = instance['state']
        solver = fb.solve.descent(lambda p: fb.ba.total_loss(state, cfg, p),
                lambda x, dx: x.retract(dx), lr_initial=1e-4, lr_reduced=1e-5,
                lr_switch_step=1000, momentum=0., max_iter=30)
        poses,log = solver(instance['poses'])
        assert len(log) == 30
        assert np.all(np.diff(log.loss) < 0.)

    def test_schedule(self, instance):
        cfg = fb.ba.BAConfig(lambda_floor=0., lambda_walls=0.)
        state = instance['state']
        solver = fb.solve.descent(lambda p: fb.ba.total_loss(state, cfg, p),
                lambda x, dx: x.retract(dx), lr_initial=1e-3, lr_reduced=1e-4,
                lr_switch_step=5, momentum=0.9, max_iter=10, epsilon=1e-30)
        _,log = solver(instance['poses'])
        assert log.lr == [1e-3]*5 + [1e-4]*5
        assert log.step == list(range(10))

    def test_converges_after_switch(self, instance):
        cfg = fb.ba.BAConfig(lambda_floor=0., lambda_walls=0.)
        state = instance['state']
        solver = fb.solve.descent(lambda p: fb.ba.total_loss(state, cfg, p),
                lambda x, dx: x.retract(dx), lr_initial=1e-3, lr_reduced=1e-4,
                lr_switch_step=3, momentum=0., max_iter=500, epsilon=1.)
        _,log = solver(instance['poses'])
        # Convergence is not tested before the switch
        assert len(log) == 5

    def test_callback_resets_momentum(self):
        seen = []
        def callback(step, x):
            seen.append(x)
            return step == 2
        solver = fb.solve.descent(lambda x: (x*x, 2.*x, {'square':x*x}),
                lambda x, dx: x + dx, lr_initial=0.1, lr_reduced=0.1,
                lr_switch_step=100, momentum=0.9, max_iter=4)
        solver(1., callback=callback)
        # a plain gradient step right after the targets changed
        assert seen[3] - seen[2] == approx(-0.2*seen[2])
        assert seen[2] - seen[1] != approx(-0.2*seen[1])

    def test_non_finite(self, instance):
        def fdf(p):
            return np.nan, np.zeros((len(p),6)), {'geom':np.nan, 'floor':0.}
        solver = fb.solve.descent(fdf, lambda x, dx: x.retract(dx), max_iter=5)
        with raises(fb.utility.FBAnalysisError, match='geom'):
            solver(instance['poses'])

    def test_log_file(self, instance, tmp_path):
        cfg = fb.ba.BAConfig(lambda_floor=0., lambda_walls=0.)
        state = instance['state']
        solver = fb.solve.descent(lambda p: fb.ba.total_loss(state, cfg, p),
                lambda x, dx: x.retract(dx), max_iter=4)
        _,log = solver(instance['poses'])
        path = str(tmp_path / 'convergence.txt')
        log.write(path)
        again = fb.solve.ConvergenceLog.read(path)
        assert again.step == log.step
        assert again.loss == log.loss
        assert again.array().shape == (4,6)


class TestConfig:
    def test_defaults(self):
        cfg = fb.ba.BAConfig()
        assert cfg.lambda_floor == 10.
        assert cfg.lambda_walls == 0.6
        assert cfg.walls_strategy == 'fixed_nearest_wall'
        assert cfg.max_steps == 40000

    @pytest.mark.parametrize('alias,name', [('np', 'nearest_point'),
            ('inw', 'iterative_nearest_wall'), ('fnw', 'fixed_nearest_wall')])
    def test_aliases(self, alias, name):
        assert fb.ba.BAConfig(walls_strategy=alias).walls_strategy == name

    @pytest.mark.parametrize('kwarg', [
            {'walls_strategy':'closest'},
            {'geom_term':'plane'},
            {'lr_initial':1e-4, 'lr_reduced':1e-3},
            {'momentum':1.},
            {'lambda_walls':-1.},
            {'lambda_ceiling':1.}],
            ids=('strategy', 'geom', 'schedule', 'momentum', 'weight', 'unknown'))
    def test_invalid(self, kwarg):
        with raises(fb.utility.FBParamError):
            fb.ba.BAConfig(**kwarg)

    def test_copy(self):
        cfg = fb.ba.BAConfig(lambda_walls=0.2)
        other = cfg.copy(lambda_floor=1.)
        assert other.lambda_walls == 0.2
        assert other.lambda_floor == 1.
        assert cfg.lambda_floor == 10.

    def test_from_configuration(self):
        fb.config['lambda_walls'] = 0.4
        try:
            assert fb.ba.BAConfig().lambda_walls == 0.4
        finally:
            fb.config.restore_default('lambda_walls')


class TestMatchSet:
    @pytest.fixture
    def frames(self):
        intr = fb.geometry.CameraIntrinsics(FX, FY, CX, CY, depth_scale=0.001)
        out = []
        for kk in range(2):
            depth = np.full((80,100), 2000, dtype=np.uint16)
            depth[10,20] = 0
            out.append(fb.dat.Frame(kk, depth, np.zeros((80,100), dtype=np.uint8), intr))
        return out

    def test_depth_from_grid(self, frames):
        ms = fb.ba.build_match_set([fb.dat.KeypointMatch(0, 50., 40., 1, 60.2, 39.8)], frames)
        assert len(ms) == 1
        assert ms.pa[0] == approx([0., 0., 2.])
        assert ms.pb[0] == approx([10.2*0.02, -0.2*0.02, 2.])

    def test_match_depth_wins(self, frames):
        ms = fb.ba.build_match_set([fb.dat.KeypointMatch(0, 50., 40., 1, 50., 40., 1.5, 2.5)], frames)
        assert ms.pa[0,2] == 1.5
        assert ms.pb[0,2] == 2.5

    def test_drop_without_depth(self, frames):
        ms = fb.ba.build_match_set([fb.dat.KeypointMatch(0, 20., 10., 1, 50., 40.),
                fb.dat.KeypointMatch(0, 50., 40., 1, 50., 40.)], frames)
        assert len(ms) == 1
        assert ms.dropped == 1

    def test_same_frame(self):
        with raises(fb.utility.FBDataError):
            fb.ba.MatchSet([0], [[0,0,1]], [0], [[0,0,1]], [[0,0]], [[0,0]], [[1,1,0,0]])


class TestClusterWalls:
    @pytest.fixture
    def walls(self):
        rng = np.random.default_rng(12)
        fp = fb.floorplan.Floorplan2D(room)
        seg = np.repeat(np.arange(4), 150)
        s = rng.uniform(0.2, 0.8, seg.size)
        uv = fp.a[seg] + s[:,np.newaxis]*(fp.b[seg] - fp.a[seg])
        pts = np.stack((uv[:,0], rng.uniform(0., 2.5, seg.size), uv[:,1]), axis=1)
        # Inward normals of the counter-clockwise room are the left normals
        d = fp.b[seg] - fp.a[seg]
        normals = np.stack((-d[:,1], np.zeros(seg.size), d[:,0]), axis=1)
        normals /= np.linalg.norm(normals, axis=1)[:,np.newaxis]
        cloud = fb.geometry.PointCloud(pts, normals=normals)
        fp3d = fb.floorplan.build_floorplan3d(fp, 0., 2.5, density=20., seed=0)
        return cloud, seg, fp3d

    def test_every_point_on_its_wall(self, walls):
        cloud,seg,fp3d = walls
        wa = fb.ba.cluster_walls(cloud, fp3d)
        assert len(wa) == len(cloud)
        assert np.array_equal(wa.plane, seg[wa.point])

    def test_interior_wall_excluded(self, walls):
        cloud,seg,fp3d = walls
        # A partition 2 m in front of the first wall; that wall's own
        # cluster is nearer to it, so the partition stays unassigned
        rng = np.random.default_rng(13)
        extra = np.stack((rng.uniform(-1., 1., 100), rng.uniform(0., 2.5, 100),
                np.ones(100)), axis=1)
        pts = np.concatenate((cloud.points, extra))
        normals = np.concatenate((cloud.normals, np.tile([0., 0., 1.], (100,1))))
        wa = fb.ba.cluster_walls(fb.geometry.PointCloud(pts, normals=normals), fp3d)
        assert len(wa) == len(cloud)
        assert wa.point.max() < len(cloud)

    def test_too_few(self, walls, capsys):
        cloud,_,fp3d = walls
        wa = fb.ba.cluster_walls(cloud.subset(np.arange(5)), fp3d)
        assert len(wa) == 0
        assert 'assignment is empty' in capsys.readouterr().out

    def test_unique_points(self):
        with raises(fb.utility.FBDataError):
            fb.ba.FixedWallAssignment([1, 1], [0, 2])


class TestRigidMotion:
    @pytest.fixture
    def moved(self, instance):
        return instance['poses'].left_multiply(fb.geometry.rot_y(0.3), [0.5, 0.2, -0.4])

    @pytest.mark.parametrize('fn', [fb.ba.geometric_loss, fb.ba.reprojection_loss,
            fb.ba.ray_distance_loss], ids=['geometric', 'reprojection', 'ray'])
    def test_geometric_terms_invariant(self, instance, moved, fn):
        before,_ = fn(instance['matches'], instance['poses'])
        after,_ = fn(instance['matches'], moved)
        assert after == approx(before, rel=1e-9)

    def test_floor_not_invariant(self, instance, moved):
        before,_ = fb.ba.floor_loss(instance['clouds'], instance['poses'], instance['floor_model'])
        after,_ = fb.ba.floor_loss(instance['clouds'], moved, instance['floor_model'])
        assert after != approx(before, rel=1e-3)

    def test_walls_not_invariant(self, instance, moved):
        clouds = instance['clouds']
        fp3d = instance['fp3d']
        for fn in (lambda p: fb.ba.walls_loss_nearest_point(clouds, p, fp3d),
                lambda p: fb.ba.walls_loss_iterative_nearest_wall(clouds, p, fp3d),
                lambda p: fb.ba.walls_loss_fixed_nearest_wall(clouds, p,
                        instance['assignment'], fp3d)):
            assert fn(moved)[0] != approx(fn(instance['poses'])[0], rel=1e-3)


class TestSingleWall:
    @pytest.fixture
    def wall(self):
        """Points scattered about the first wall of the room, seen by two frames"""
        rng = np.random.default_rng(17)
        N = 2
        poses = fb.geometry.PoseArray.identity(N).retract(np.hstack((
                0.02*rng.standard_normal((N,3)), 0.1*rng.standard_normal((N,3)))))
        fp = fb.floorplan.Floorplan2D(room)
        fp3d = fb.floorplan.build_floorplan3d(fp, 0., 2.5, density=50., seed=4)
        M = 300
        wall_world = np.stack((rng.uniform(-2., 2., M), rng.uniform(0.5, 2., M),
                -1. + 0.02*rng.standard_normal(M)), axis=1)
        floor_world = np.stack((rng.uniform(-2., 2., 10), np.zeros(10),
                rng.uniform(0., 3., 10)), axis=1)
        clouds = make_clouds(poses, np.arange(10) % N, floor_world,
                np.arange(M) % N, wall_world)
        oriented = fb.geometry.PointCloud(clouds.walls.points,
                normals=np.tile(fp3d.normals[0], (M,1)))
        assignment = fb.ba.cluster_walls(oriented, fp3d)
        return poses, clouds, fp3d, assignment

    def test_one_cluster(self, wall):
        _,clouds,_,assignment = wall
        assert len(assignment) == len(clouds.walls)
        assert np.all(assignment.plane == 0)

    @pytest.mark.parametrize('offset', [0., 0.03])
    def test_iterative_equals_fixed(self, wall, offset):
        poses,clouds,fp3d,assignment = wall
        poses = poses.retract(np.tile([0., offset, 0., offset, 0., -offset], (len(poses),1)))
        inw,Gi = fb.ba.walls_loss_iterative_nearest_wall(clouds, poses, fp3d)
        fnw,Gf = fb.ba.walls_loss_fixed_nearest_wall(clouds, poses, assignment, fp3d)
        assert fnw == approx(inw, rel=1e-9)
        assert Gf == approx(Gi, rel=1e-9, abs=1e-9)


@pytest.fixture(scope='module')
def drifted():
    """A rendered walk through three rooms, its matches, and drifted poses"""
    fp = fb.synth.three_room_floorplan()
    spec = fb.synth.SceneSpec(frames=12, width=80, height=60, pitch_deg=-30.,
            turns=0.5, landmark_density=4., quantize=False, seed=4)
    scene,frames = fb.synth.generate_scene(fp, spec)
    matches = fb.synth.synth_matches(scene, frames)
    poses = fb.synth.perturb_poses(scene.trajectory, 0.3, 0.015, seed=5)
    clouds = fb.clouds.build_semantic_clouds(frames, poses, 4)
    fp3d = fb.floorplan.build_floorplan3d(fp, 0., spec.camera_height, seed=6)
    return {'floorplan':fp, 'scene':scene, 'frames':frames, 'matches':matches,
            'poses':poses, 'clouds':clouds, 'fp3d':fp3d}


@pytest.fixture(scope='module')
def refined(drifted):
    """refine() with each walls strategy from the same drifted start"""
    out = {}
    for strategy in fb.ba.STRATEGIES:
        cfg = fb.ba.BAConfig(walls_strategy=strategy, lr_switch_step=300,
                max_steps=600, realign_period=0, stride=4)
        out[strategy] = fb.ba.refine(drifted['frames'], drifted['floorplan'],
                drifted['matches'], cfg, drifted['poses'], gravity=[0., -1., 0.],
                transform=fb.align.SimilarityTransform())
    return out


def walls_nsd(drifted, poses):
    walls = fb.clouds.build_semantic_clouds(drifted['frames'], poses, 4).walls
    return fb.metrics.nsd(walls, drifted['floorplan'])


class TestDriftedScene:
    def test_drift_is_visible(self, drifted):
        assert fb.metrics.ate(drifted['poses'], drifted['scene'].trajectory) > 0.01

    @pytest.mark.parametrize('strategy', fb.ba.STRATEGIES)
    def test_ate_halved(self, drifted, refined, strategy):
        truth = drifted['scene'].trajectory
        before = fb.metrics.ate(drifted['poses'], truth)
        after = fb.metrics.ate(refined[strategy].poses, truth)
        assert after <= 0.5*before

    def test_nearest_point_best_nsd(self, drifted, refined):
        nsd = {s:walls_nsd(drifted, r.poses) for s,r in refined.items()}
        assert nsd['nearest_point'] < walls_nsd(drifted, drifted['poses'])
        # within a millimeter of the best of the plane strategies, or better
        assert nsd['nearest_point'] <= min(nsd['iterative_nearest_wall'],
                nsd['fixed_nearest_wall']) + 1e-3

    def test_nearest_point_bounds_nsd(self, drifted):
        # Floorplan samples lie above the segments, so a wall point is never
        # nearer to a sample than its horizontal distance to the floorplan
        clouds = drifted['clouds']
        value,_ = fb.ba.walls_loss_nearest_point(clouds, drifted['poses'], drifted['fp3d'])
        total = fb.metrics.nsd(clouds.walls, drifted['floorplan']) * len(clouds.walls)
        assert total <= value

    def test_fixed_needs_no_search(self, drifted, monkeypatch):
        clouds = drifted['clouds']
        poses = drifted['poses']
        fp3d = drifted['fp3d']
        assignment = fb.ba.cluster_walls(fb.ba.walls_with_normals(clouds, poses), fp3d)
        assert len(assignment) > 0
        calls = []
        nearest = fb.geometry.nearest
        def counted(tree, query):
            calls.append(len(query))
            return nearest(tree, query)
        monkeypatch.setattr(fb.geometry, 'nearest', counted)

        def fastest(fn):
            best = np.inf
            for _ in range(5):
                start = time.perf_counter()
                fn()
                best = min(best, time.perf_counter() - start)
            return best

        t_fixed = fastest(lambda: fb.ba.walls_loss_fixed_nearest_wall(clouds, poses,
                assignment, fp3d))
        assert calls == []
        t_iter = fastest(lambda: fb.ba.walls_loss_iterative_nearest_wall(clouds,
                poses, fp3d))
        assert calls == [len(clouds.walls)]*5
        assert t_fixed < t_iter

    def test_tilted_gravity(self, drifted):
        a = np.radians(1.5)
        cfg = fb.ba.BAConfig(max_steps=1, realign_period=0, stride=4)
        result = fb.ba.refine(drifted['frames'], drifted['floorplan'], drifted['matches'],
                cfg, drifted['poses'], gravity=[0., -np.cos(a), np.sin(a)],
                transform=fb.align.SimilarityTransform())
        assert not result.alignment.transform.is_level
        assert result.level @ [0., -np.cos(a), np.sin(a)] == approx([0., -1., 0.], abs=1e-9)
        # poses come back in the input coordinates after a single small step
        assert result.poses.translations == approx(drifted['poses'].translations, abs=0.01)
