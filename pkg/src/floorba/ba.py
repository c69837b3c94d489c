"""floorba bundle adjustment

The camera poses of a scan are refined by minimizing

    L = L_geom + lambda_floor L_floor + lambda_walls L_walls

L_geom      keeps matched keypoints of different frames together
L_floor     pulls labeled floor points onto the floor plane, which is
            fitted once before the optimization starts
L_walls     pulls labeled wall points onto the floorplan walls

There are three ways to pull the walls, selected by 'walls_strategy':

    nearest_point           distance to the nearest sampled floorplan
                            point, searched at every step
    iterative_nearest_wall  distance to the wall plane of the nearest
                            sampled point, searched at every step
    fixed_nearest_wall      distance to wall planes assigned once by
                            cluster_walls() and kept until the next
                            re-alignment

and three geometric terms, selected by 'geom_term':

    point           distance between the two backprojected 3D points
    reprojection    pixel distance between an observation and the
                    projection of its partner, in both directions
    ray             distance between the two viewing rays

Every term function returns the plain sum of its residuals and the
gradient with respect to the poses as an (N,6) array (see the geometry
module for the pose increment).  Nearest-neighbor targets are held
constant in the gradients.  total_loss() weights the terms and, when
'reduction' is 'mean', divides each by its number of residuals.

optimize_poses() runs the momentum descent of the solve module and
re-aligns the floorplan every 'realign_period' steps.  refine() is the
whole pipeline: clouds, alignment, leveling, floor fit, optimization.
"""

import numpy as np
import floorba as fb


STRATEGIES = ('nearest_point', 'iterative_nearest_wall', 'fixed_nearest_wall')
GEOM_TERMS = ('point', 'reprojection', 'ray')
_STRATEGY_ALIASES = {'np':'nearest_point', 'inw':'iterative_nearest_wall',
        'fnw':'fixed_nearest_wall'}

# Residuals below this are treated as zero in the gradients
_TINY = 1e-9


def strategy_name(name):
    """Resolve a walls strategy or its short alias (np, inw, fnw)"""
    name = _STRATEGY_ALIASES.get(name, name)
    if name not in STRATEGIES:
        raise fb.utility.FBParamError('Unrecognized walls strategy: %r'%name)
    return name


class BAConfig:
    """Bundle adjustment parameters
    cfg = BAConfig(**overrides)

Every parameter not given is taken from the floorba configuration.

    lambda_floor, lambda_walls      term weights (>= 0)
    walls_strategy                  see STRATEGIES; np, inw, fnw accepted
    geom_term                       point, reprojection, or ray
    reduction                       mean or sum
    lr_initial, lr_reduced          learning rates, lr_reduced < lr_initial
    lr_switch_step                  step at which lr_reduced takes over
    convergence_eps                 loss change that ends the iteration
    momentum                        in [0,1)
    max_steps                       hard limit on the number of steps
    realign_period                  steps between re-alignments, 0 = never
    iba, iba_weight                 hold the geometric term at its own
                                    minimum while pulling to the floorplan
    stride                          pixel stride of the clouds
    cluster_angle_deg, cluster_gap  wall clustering thresholds
"""
    keys = ('lambda_floor', 'lambda_walls', 'walls_strategy', 'geom_term',
            'reduction', 'lr_initial', 'lr_reduced', 'lr_switch_step',
            'convergence_eps', 'momentum', 'max_steps', 'realign_period',
            'iba', 'iba_weight', 'stride', 'cluster_angle_deg', 'cluster_gap')

    def __init__(self, **kwarg):
        for key in kwarg:
            if key not in self.keys:
                raise fb.utility.FBParamError('%r is not a bundle adjustment parameter'%key)
        for key in self.keys:
            entry = fb.config.entries[key]
            value = kwarg.get(key, entry.value)
            if key == 'walls_strategy':
                value = strategy_name(value)
            # Cast through the configuration entry rules
            setattr(self, key, entry._cast(value))
        self.validate()

    @classmethod
    def from_config(cls):
        return cls()

    def copy(self, **kwarg):
        values = {key:getattr(self, key) for key in self.keys}
        values.update(kwarg)
        return BAConfig(**values)

    def validate(self):
        if self.lambda_floor < 0 or self.lambda_walls < 0:
            raise fb.utility.FBParamError('Loss weights must not be negative.')
        if not (self.lr_initial > 0 and self.lr_reduced > 0):
            raise fb.utility.FBParamError('Learning rates must be positive.')
        if not self.lr_reduced < self.lr_initial:
            raise fb.utility.FBParamError('lr_reduced must be smaller than lr_initial.')
        if not (0. <= self.momentum < 1.):
            raise fb.utility.FBParamError('momentum must be in [0,1).')
        if not self.convergence_eps > 0:
            raise fb.utility.FBParamError('convergence_eps must be positive.')
        if self.max_steps < 1 or self.lr_switch_step < 0 or self.realign_period < 0:
            raise fb.utility.FBParamError('Step counts must not be negative.')
        if self.stride < 1:
            raise fb.utility.FBParamError('stride must be a positive integer.')

    def __repr__(self):
        justify = max(len(k) for k in self.keys)
        fmt = '%' + str(justify) + 's : %s\n'
        return ''.join(fmt%(k, repr(getattr(self, k))) for k in self.keys)


class MatchSet:
    """Matched keypoints as camera-frame point pairs
    ms = MatchSet(frame_a, pa, frame_b, pb, obs_a, obs_b, intrinsics)

frame_a, frame_b    (K,) positions of the frames in the frame list
pa, pb              (K,3) camera-frame points; depth is not a variable
obs_a, obs_b        (K,2) pixel observations (u, v)
intrinsics          (N,4) per-frame fx, fy, cx, cy
dropped             number of matches without valid depth
"""
    def __init__(self, frame_a, pa, frame_b, pb, obs_a, obs_b, intrinsics, dropped=0):
        self.frame_a = np.asarray(frame_a, dtype=np.int64).reshape(-1)
        self.frame_b = np.asarray(frame_b, dtype=np.int64).reshape(-1)
        self.pa = np.asarray(pa, dtype=float).reshape(-1,3)
        self.pb = np.asarray(pb, dtype=float).reshape(-1,3)
        self.obs_a = np.asarray(obs_a, dtype=float).reshape(-1,2)
        self.obs_b = np.asarray(obs_b, dtype=float).reshape(-1,2)
        self.intrinsics = np.asarray(intrinsics, dtype=float).reshape(-1,4)
        self.dropped = int(dropped)
        K = self.frame_a.shape[0]
        for arr in (self.frame_b, self.pa, self.pb, self.obs_a, self.obs_b):
            if arr.shape[0] != K:
                raise fb.utility.FBDataError('MatchSet arrays have inconsistent lengths.')
        if np.any(self.frame_a == self.frame_b):
            raise fb.utility.FBDataError('A match must join two different frames.')

    def __len__(self):
        return self.frame_a.shape[0]

    def __repr__(self):
        return 'MatchSet(<%d pairs>)'%len(self)


def _intrinsics_table(frames):
    return np.array([[f.intrinsics.fx, f.intrinsics.fy, f.intrinsics.cx, f.intrinsics.cy]
            for f in frames]).reshape(-1,4)


def build_match_set(matches, frames):
    """Backproject keypoint matches into camera-frame point pairs
    ms = build_match_set(matches, frames)

The depth of each keypoint is the match's own depth when the file
carried one, and otherwise the depth grid value at the nearest pixel.
Matches without valid depth in either frame are dropped and counted in
ms.dropped.
"""
    position = {f.index:kk for kk,f in enumerate(frames)}
    fa = []
    fb_ = []
    pa = []
    pb = []
    oa = []
    ob = []
    dropped = 0
    for m in matches:
        if m.frame_a not in position or m.frame_b not in position:
            raise fb.utility.FBDataError('Match refers to an unknown frame: %r'%m)
        ka = position[m.frame_a]
        kb = position[m.frame_b]
        za = m.za
        if za is None:
            za = frames[ka].depth_at(int(round(m.va)), int(round(m.ua)))
        zb = m.zb
        if zb is None:
            zb = frames[kb].depth_at(int(round(m.vb)), int(round(m.ub)))
        if not (za > 0 and zb > 0):
            dropped += 1
            continue
        fa.append(ka)
        fb_.append(kb)
        pa.append(frames[ka].intrinsics.backproject(m.ua, m.va, za))
        pb.append(frames[kb].intrinsics.backproject(m.ub, m.vb, zb))
        oa.append((m.ua, m.va))
        ob.append((m.ub, m.vb))
    if dropped:
        fb.utility.print_warning('Dropped %d matches without valid depth.'%dropped)
    return MatchSet(fa, np.reshape(pa, (-1,3)), fb_, np.reshape(pb, (-1,3)),
            np.reshape(oa, (-1,2)), np.reshape(ob, (-1,2)),
            _intrinsics_table(frames), dropped)


class FloorModel:
    """The floor plane, fitted once
    fm = FloorModel(plane)
    fm = FloorModel.fit(points)
"""
    def __init__(self, plane):
        self.plane = plane

    def __repr__(self):
        return 'FloorModel(%r)'%self.plane

    @classmethod
    def fit(cls, points):
        return cls(fb.geometry.fit_plane(points))


class FixedWallAssignment:
    """Walls cloud points paired with floorplan wall planes
    wa = FixedWallAssignment(point, plane)

point   (P,) indices into the walls cloud, each at most once
plane   (P,) indices into the floorplan wall planes
"""
    def __init__(self, point=(), plane=()):
        self.point = np.asarray(point, dtype=np.int64).reshape(-1)
        self.plane = np.asarray(plane, dtype=np.int64).reshape(-1)
        if self.point.shape != self.plane.shape:
            raise fb.utility.FBDataError('Assignment arrays have different lengths.')
        if np.unique(self.point).size != self.point.size:
            raise fb.utility.FBDataError('A point may be assigned only once.')

    def __len__(self):
        return self.point.shape[0]

    def __repr__(self):
        return 'FixedWallAssignment(<%d points, %d planes>)'%(
                len(self), np.unique(self.plane).size)




####################################
# Loss terms
####################################
def _world(clouds, name, poses):
    index = clouds.frame_index(name)
    arms = poses.arms(index, clouds.camera[name])
    return index, arms, arms + poses.translations[index]


def _unit(e, d):
    """e/d with zero where d is below the singularity guard"""
    ok = d > _TINY
    out = np.zeros_like(e)
    out[ok] = e[ok] / d[ok,np.newaxis]
    return out


def _abs_grad(s, n):
    """Gradient of |s| for s = n.p + d, zero near the kink"""
    sg = np.where(np.abs(s) > _TINY, np.sign(s), 0.)
    return sg[:,np.newaxis] * n


def geometric_loss(matches, poses):
    """Sum of distances between matched 3D points
    value, grad = geometric_loss(matches, poses)

For every pair, p = T_a pa and p' = T_b pb are compared in the world.
Pairs closer than 1e-9 contribute no gradient.
"""
    N = len(poses)
    if len(matches) == 0:
        return 0., np.zeros((N,6))
    ia,aa,wa = _index_arms(poses, matches.frame_a, matches.pa)
    ib,ab,wb = _index_arms(poses, matches.frame_b, matches.pb)
    e = wa - wb
    d = np.sqrt(np.einsum('mi,mi->m', e, e))
    g = _unit(e, d)
    G = fb.geometry.pose_gradient(np.concatenate((ia,ib)),
            np.concatenate((aa,ab)), np.concatenate((g,-g)), N)
    return float(d.sum()), G


def _index_arms(poses, index, cam):
    arms = poses.arms(index, cam)
    return index, arms, arms + poses.translations[index]


def _reprojection(poses, fsrc, psrc, fdst, obs, intr):
    """One direction of the reprojection term"""
    a = poses.arms(fsrc, psrc)
    w = a + poses.translations[fsrc] - poses.translations[fdst]
    R = poses.matrices()[fdst]
    c = np.einsum('mji,mj->mi', R, w)
    fx,fy,cx,cy = intr[fdst].T
    z = c[:,2]
    front = z > 1e-9
    zi = np.where(front, 1./np.where(front, z, 1.), 0.)
    r = np.stack((fx*c[:,0]*zi + cx - obs[:,0], fy*c[:,1]*zi + cy - obs[:,1]), axis=1)
    d = np.sqrt(np.einsum('mi,mi->m', r, r))
    d[~front] = 0.
    gr = _unit(r, d)
    gc = np.stack((fx*zi*gr[:,0], fy*zi*gr[:,1],
            -(fx*c[:,0]*gr[:,0] + fy*c[:,1]*gr[:,1])*zi*zi), axis=1)
    gw = np.einsum('mij,mj->mi', R, gc)
    return float(d.sum()), np.concatenate((fsrc, fdst)), \
            np.concatenate((a, w)), np.concatenate((gw, -gw))


def reprojection_loss(matches, poses):
    """Sum of pixel reprojection errors in both directions
    value, grad = reprojection_loss(matches, poses)

The point backprojected in frame a is projected into frame b and
compared with the keypoint observed there, and vice versa.  Points
behind the camera contribute nothing.
"""
    N = len(poses)
    if len(matches) == 0:
        return 0., np.zeros((N,6))
    v1,i1,a1,g1 = _reprojection(poses, matches.frame_a, matches.pa,
            matches.frame_b, matches.obs_b, matches.intrinsics)
    v2,i2,a2,g2 = _reprojection(poses, matches.frame_b, matches.pb,
            matches.frame_a, matches.obs_a, matches.intrinsics)
    G = fb.geometry.pose_gradient(np.concatenate((i1,i2)),
            np.concatenate((a1,a2)), np.concatenate((g1,g2)), N)
    return v1 + v2, G


def ray_distance_loss(matches, poses):
    """Sum of distances between the two viewing rays of each match
    value, grad = ray_distance_loss(matches, poses)

Each ray starts at its camera center and passes through the keypoint.
Nearly parallel rays, |d_a x d_b| < 1e-9, contribute nothing.
"""
    N = len(poses)
    if len(matches) == 0:
        return 0., np.zeros((N,6))
    fa = matches.frame_a
    fb_ = matches.frame_b
    da = poses.arms(fa, matches.pa)
    db = poses.arms(fb_, matches.pb)
    e = poses.translations[fb_] - poses.translations[fa]
    n = np.cross(da, db)
    nn = np.sqrt(np.einsum('mi,mi->m', n, n))
    ok = nn > 1e-9
    nn = np.where(ok, nn, 1.)
    s = np.einsum('mi,mi->m', e, n)
    value = np.where(ok, np.abs(s)/nn, 0.)
    sg = np.where(ok & (value > _TINY), np.sign(s), 0.)
    h = (sg/nn)[:,np.newaxis]*e - (np.abs(s)*np.where(ok, 1., 0.)/nn**3)[:,np.newaxis]*n
    h[sg == 0.] = 0.
    gda = np.cross(db, h)
    gdb = np.cross(h, da)
    f = (sg/nn)[:,np.newaxis]*n
    G = fb.geometry.accumulate(np.concatenate((fa, fb_)),
            np.concatenate((np.cross(da, gda), np.cross(db, gdb))),
            np.concatenate((-f, f)), N)
    return float(value.sum()), G


def floor_loss(clouds, poses, floor_model, warn=True):
    """Sum of distances from the floor points to the floor plane
    value, grad = floor_loss(clouds, poses, floor_model)

An empty floor cloud or a missing floor model gives zero with a
warning.
"""
    N = len(poses)
    if floor_model is None or len(clouds.floor) == 0:
        if warn:
            fb.utility.print_warning('The floor term is empty.')
        return 0., np.zeros((N,6))
    index,arms,p = _world(clouds, 'floor', poses)
    n = floor_model.plane.normal
    s = p @ n + floor_model.plane.offset
    G = fb.geometry.pose_gradient(index, arms, _abs_grad(s, n[np.newaxis,:]), N)
    return float(np.abs(s).sum()), G


def walls_loss_nearest_point(clouds, poses, fp3d):
    """Sum of distances from wall points to their nearest floorplan points
    value, grad = walls_loss_nearest_point(clouds, poses, fp3d)
"""
    N = len(poses)
    if len(clouds.walls) == 0:
        return 0., np.zeros((N,6))
    index,arms,p = _world(clouds, 'walls', poses)
    _,ii = fb.geometry.nearest(fp3d.tree, p)
    e = p - fp3d.points[ii]
    d = np.sqrt(np.einsum('mi,mi->m', e, e))
    G = fb.geometry.pose_gradient(index, arms, _unit(e, d), N)
    return float(d.sum()), G


def _plane_term(index, arms, p, normals, offsets, N):
    s = np.einsum('mi,mi->m', p, normals) + offsets
    G = fb.geometry.pose_gradient(index, arms, _abs_grad(s, normals), N)
    return float(np.abs(s).sum()), G


def walls_loss_iterative_nearest_wall(clouds, poses, fp3d):
    """Sum of distances from wall points to the wall of their nearest floorplan point
    value, grad = walls_loss_iterative_nearest_wall(clouds, poses, fp3d)

The nearest sampled point is searched at every call with ties broken
toward the lower index.
"""
    N = len(poses)
    if len(clouds.walls) == 0:
        return 0., np.zeros((N,6))
    index,arms,p = _world(clouds, 'walls', poses)
    _,ii = fb.geometry.nearest(fp3d.tree, p)
    sid = fp3d.segment_id[ii]
    return _plane_term(index, arms, p, fp3d.normals[sid], fp3d.offsets[sid], N)


def walls_loss_fixed_nearest_wall(clouds, poses, assignment, fp3d, warn=True):
    """Sum of distances from assigned wall points to their fixed wall planes
    value, grad = walls_loss_fixed_nearest_wall(clouds, poses, assignment, fp3d)

An empty assignment gives zero with a warning.
"""
    N = len(poses)
    if assignment is None or len(assignment) == 0:
        if warn:
            fb.utility.print_warning('The wall assignment is empty.')
        return 0., np.zeros((N,6))
    index = clouds.frame_index('walls')[assignment.point]
    arms = poses.arms(index, clouds.camera['walls'][assignment.point])
    p = arms + poses.translations[index]
    return _plane_term(index, arms, p, fp3d.normals[assignment.plane],
            fp3d.offsets[assignment.plane], N)




####################################
# Wall clustering
####################################
def _angle_diff(phi, ref):
    """Absolute difference of undirected angles, modulo pi"""
    return np.abs(((phi - ref + np.pi/2) % np.pi) - np.pi/2)


def _dominant_angle(phi, width):
    nb = max(int(np.ceil(np.pi / width)), 3)
    w = np.pi / nb
    count = np.bincount(np.floor(phi / w).astype(np.int64) % nb, minlength=nb)
    window = count + np.roll(count, 1) + np.roll(count, -1)
    top = int(np.argmax(window))
    members = _angle_diff(phi, (top+0.5)*w) <= 1.5*w
    out = 0.5*np.arctan2(np.sin(2*phi[members]).sum(), np.cos(2*phi[members]).sum())
    return np.mod(out, np.pi)


def _split(values, gap):
    """Groups of sorted positions separated by more than gap"""
    order = np.argsort(values, kind='stable')
    breaks = np.nonzero(np.diff(values[order]) > gap)[0] + 1
    return np.split(order, breaks)


def cluster_walls(walls_cloud, fp3d, angle_deg=None, gap=None, along_gap=0.5,
        min_points=10):
    """Assign walls cloud points to floorplan wall planes
    wa = cluster_walls(walls_cloud, fp3d)

walls_cloud is a PointCloud in the same coordinates as fp3d.  Normals
are estimated when it carries none.

1.  Points with valid, roughly horizontal normals are grouped into
    direction clusters, each holding the normals within angle_deg
    (configured 'cluster_angle_deg') of its mean direction.
2.  Each direction cluster is split into parallel walls wherever the
    offsets along the normal jump by more than gap ('cluster_gap'), and
    then along the wall wherever there is a hole wider than along_gap.
3.  A vertical plane is fitted to every fragment of at least min_points
    points.
4.  A fitted plane and a floorplan wall are matched when they are
    parallel within angle_deg and each is the other's nearest, measured
    from the fragment's centroid to the floorplan segment.

Points of matched fragments are assigned to their floorplan wall; the
rest are excluded.  Too few points give an empty assignment with a
warning.
"""
    if angle_deg is None:
        angle_deg = fb.config['cluster_angle_deg']
    if gap is None:
        gap = fb.config['cluster_gap']
    if len(walls_cloud) < max(min_points, 3):
        fb.utility.print_warning('Too few wall points to cluster; the wall assignment is empty.')
        return FixedWallAssignment()
    if not walls_cloud.has_normals:
        k = min(fb.config['normal_k'], len(walls_cloud)-1)
        walls_cloud = fb.geometry.estimate_normals(walls_cloud, k)

    pts = walls_cloud.points
    nrm = walls_cloud.normals
    candidate = np.nonzero(walls_cloud.normal_valid & (np.abs(nrm[:,1]) < 0.5))[0]
    phi = np.mod(fb.geometry.yaw_of(nrm[candidate]), np.pi)
    threshold = np.radians(angle_deg)

    # Fragments: (point indices, fitted normal, centroid in x-z)
    fragments = []
    remaining = np.arange(candidate.size)
    while remaining.size >= min_points:
        mean = _dominant_angle(phi[remaining], threshold)
        members = _angle_diff(phi[remaining], mean) <= threshold
        if np.count_nonzero(members) < min_points:
            break
        group = candidate[remaining[members]]
        remaining = remaining[~members]
        n = np.array([np.cos(mean), 0., -np.sin(mean)])
        t = np.array([np.sin(mean), 0., np.cos(mean)])
        for wall in _split(pts[group] @ n, gap):
            wall = group[wall]
            for piece in _split(pts[wall] @ t, along_gap):
                piece = wall[piece]
                if piece.size < min_points:
                    continue
                xz = pts[piece][:,[0,2]]
                c = xz.mean(axis=0)
                _,s,Vt = np.linalg.svd(xz - c, full_matrices=False)
                if not s[0] > 1e-9:
                    continue
                fragments.append((piece, np.array([Vt[1,0], 0., Vt[1,1]]), c))

    if not fragments:
        fb.utility.print_warning('No wall clusters were found; the wall assignment is empty.')
        return FixedWallAssignment()

    C = len(fragments)
    normals = np.array([f[1] for f in fragments])
    centroids = np.array([f[2] for f in fragments])
    parallel = np.abs(normals @ fp3d.normals.T) >= np.cos(threshold)
    D = fb.geometry.segment_distance_2d(centroids, fp3d.segments[:,:2], fp3d.segments[:,2:])
    D = np.where(parallel, D, np.inf)
    point = []
    plane = []
    for cc in range(C):
        if not np.isfinite(D[cc].min()):
            continue
        ss = int(np.argmin(D[cc]))
        if int(np.argmin(D[:,ss])) != cc:
            continue
        point.append(fragments[cc][0])
        plane.append(np.full(fragments[cc][0].size, ss, dtype=np.int64))
    if not point:
        fb.utility.print_warning('No wall cluster matched the floorplan; the wall assignment is empty.')
        return FixedWallAssignment()
    return FixedWallAssignment(np.concatenate(point), np.concatenate(plane))




####################################
# Total loss and optimization
####################################
class BAState:
    """Everything the loss needs besides the poses
    state = BAState(frames, matches, clouds, fp3d, floor_model=None,
            assignment=None, floorplan=None)

clouds and fp3d must be in the same (gravity-aligned) coordinates.
geom_bound is set by the inequality-constrained mode.
"""
    def __init__(self, frames, matches, clouds, fp3d, floor_model=None,
            assignment=None, floorplan=None):
        self.frames = frames
        self.matches = matches
        self.clouds = clouds
        self.fp3d = fp3d
        self.floor_model = floor_model
        self.assignment = assignment
        self.floorplan = floorplan
        self.geom_bound = None

    def __repr__(self):
        return 'BAState(<%d frames, %d matches>)'%(len(self.frames), len(self.matches))

    def counts(self, config):
        """Number of residuals of each term"""
        walls = len(self.clouds.walls)
        if config.walls_strategy == 'fixed_nearest_wall':
            walls = 0 if self.assignment is None else len(self.assignment)
        return {'geom': (2 if config.geom_term == 'reprojection' else 1)*len(self.matches),
                'floor': len(self.clouds.floor) if self.floor_model is not None else 0,
                'walls': walls}

    def idle_frames(self, config):
        """Positions of frames that no active term touches"""
        used = np.zeros(len(self.frames), dtype=bool)
        used[self.matches.frame_a] = True
        used[self.matches.frame_b] = True
        if config.lambda_floor > 0 and self.floor_model is not None:
            used[self.clouds.frame_index('floor')] = True
        if config.lambda_walls > 0:
            index = self.clouds.frame_index('walls')
            if config.walls_strategy == 'fixed_nearest_wall':
                index = index[self.assignment.point] if self.assignment is not None else index[:0]
            used[index] = True
        return np.nonzero(~used)[0]


def _geom(state, poses, config):
    if config.geom_term == 'reprojection':
        return reprojection_loss(state.matches, poses)
    elif config.geom_term == 'ray':
        return ray_distance_loss(state.matches, poses)
    return geometric_loss(state.matches, poses)


def _walls(state, poses, config):
    if config.walls_strategy == 'nearest_point':
        return walls_loss_nearest_point(state.clouds, poses, state.fp3d)
    elif config.walls_strategy == 'iterative_nearest_wall':
        return walls_loss_iterative_nearest_wall(state.clouds, poses, state.fp3d)
    return walls_loss_fixed_nearest_wall(state.clouds, poses, state.assignment,
            state.fp3d, warn=False)


def total_loss(state, config=None, poses=None):
    """Weighted sum of the loss terms
    loss, grad, terms = total_loss(state, config, poses)

terms holds the (reduced, unweighted) values of 'geom', 'floor', and
'walls'.  With reduction 'mean', each term is divided by its number of
residuals.  Terms with zero weight are not evaluated.  In the
inequality-constrained mode, iba_weight times the excess of the
geometric term over state.geom_bound is added.
"""
    if config is None:
        config = BAConfig()
    N = len(poses)
    counts = state.counts(config)
    def reduce(name, value, grad):
        if config.reduction == 'mean' and counts[name] > 0:
            return value / counts[name], grad / counts[name]
        return value, grad

    terms = {}
    geom,G = reduce('geom', *_geom(state, poses, config))
    terms['geom'] = geom
    loss = geom
    grad = G.copy()
    if state.geom_bound is not None and geom > state.geom_bound:
        loss += config.iba_weight * (geom - state.geom_bound)
        grad += config.iba_weight * G

    for name,weight,fn in (
            ('floor', config.lambda_floor,
                lambda: floor_loss(state.clouds, poses, state.floor_model, warn=False)),
            ('walls', config.lambda_walls,
                lambda: _walls(state, poses, config))):
        if weight > 0:
            value,G = reduce(name, *fn())
            loss += weight * value
            grad += weight * G
        else:
            value = 0.
        terms[name] = value
    return loss, grad, terms


def walls_with_normals(clouds, poses):
    """The walls cloud with normals oriented toward its cameras"""
    walls = clouds.walls
    if len(walls) < 3:
        return walls
    k = min(fb.config['normal_k'], len(walls)-1)
    return fb.geometry.estimate_normals(walls, k, poses.centers())


def realign(state, poses, config):
    """Re-run the alignment on the current clouds and refresh the targets
    ok = realign(state, poses, config)

The clouds are expected to be gravity aligned already.  On failure the
old targets are kept, a warning is printed, and False is returned.
"""
    if state.floorplan is None:
        return False
    clouds = fb.clouds.repose_clouds(state.clouds, state.frames, poses)
    try:
        result = fb.align.align(clouds.full, state.floorplan, gravity=(0.,-1.,0.),
                viewpoints=poses.centers())
    except fb.utility.FBAnalysisError as err:
        fb.utility.print_warning('Re-alignment failed; keeping the previous floorplan. ' + str(err))
        return False
    state.fp3d = result.floorplan3d
    if config.walls_strategy == 'fixed_nearest_wall':
        state.assignment = cluster_walls(walls_with_normals(clouds, poses), state.fp3d,
                config.cluster_angle_deg, config.cluster_gap)
    return True


def optimize_poses(frames, matches, clouds, fp3d, config=None, poses=None,
        floor_model=None, floorplan=None):
    """Refine the poses by gradient descent with momentum
    poses, log = optimize_poses(frames, matches, clouds, fp3d, config)

frames      list of dat.Frame
matches     MatchSet, or a list of KeypointMatch converted by
            build_match_set()
clouds      clouds.SemanticClouds built with the starting poses
fp3d        Floorplan3D in the coordinates of the clouds
config      BAConfig; defaults to the configuration
poses       starting PoseArray; defaults to the frames' initial poses
floor_model FloorModel; fitted to the floor cloud when omitted
floorplan   Floorplan2D used for re-alignment; without it the floorplan
            is never re-aligned

For the fixed strategy, the wall assignment is built before the first
step and rebuilt at every re-alignment.  Frames that no term touches
keep their poses; they are reported with a warning.

Returns the refined PoseArray and a solve.ConvergenceLog.
"""
    if config is None:
        config = BAConfig()
    if poses is None:
        poses = fb.dat.initial_poses(frames)
    if not isinstance(matches, MatchSet):
        matches = build_match_set(matches, frames)
    if floor_model is None and len(clouds.floor) >= 3:
        try:
            floor_model = FloorModel.fit(clouds.floor.points)
        except fb.utility.FBAnalysisError:
            fb.utility.print_warning('The floor plane could not be fitted.')
    if floor_model is None and config.lambda_floor > 0:
        fb.utility.print_warning('The floor term is empty.')

    assignment = None
    if config.walls_strategy == 'fixed_nearest_wall' and config.lambda_walls > 0:
        assignment = cluster_walls(walls_with_normals(clouds, poses), fp3d,
                config.cluster_angle_deg, config.cluster_gap)
    state = BAState(frames, matches, clouds, fp3d, floor_model, assignment, floorplan)

    idle = state.idle_frames(config)
    if idle.size:
        fb.utility.print_warning('%d frame(s) have no residuals and keep their poses.'%idle.size)

    def retract(x, dx):
        return x.retract(dx)

    def solver(cfg):
        return fb.solve.descent(lambda x: total_loss(state, cfg, x), retract,
                lr_initial=cfg.lr_initial, lr_reduced=cfg.lr_reduced,
                lr_switch_step=cfg.lr_switch_step, momentum=cfg.momentum,
                epsilon=cfg.convergence_eps, max_iter=cfg.max_steps)

    callback = None
    if config.realign_period > 0 and floorplan is not None:
        def callback(step, x):
            if step > 0 and step % config.realign_period == 0:
                return realign(state, x, config)
            return False

    log = fb.solve.ConvergenceLog()
    if config.iba:
        # Round one: the geometric term alone
        geom_only = config.copy(lambda_floor=0., lambda_walls=0., iba=False)
        poses,log = solver(geom_only)(poses, log=log)
        state.geom_bound = total_loss(state, geom_only, poses)[2]['geom']
    poses,log = solver(config)(poses, callback, log=log,
            first_step=log.step[-1]+1 if len(log) else 0)
    return poses, log




####################################
# The whole pipeline
####################################
class RefineResult:
    """The outcome of refine()

poses       refined PoseArray in the coordinates of the input poses
log         solve.ConvergenceLog
alignment   align.AlignResult of the initial alignment
level       rotation applied to level the scan during the optimization
floor_model the fitted FloorModel or None
floorplan3d the floorplan model in the leveled coordinates
"""
    def __init__(self, poses, log, alignment, level, floor_model, floorplan3d):
        self.poses = poses
        self.log = log
        self.alignment = alignment
        self.level = level
        self.floor_model = floor_model
        self.floorplan3d = floorplan3d

    def __repr__(self):
        return 'RefineResult(<%d poses, %d steps>)'%(len(self.poses), len(self.log))


def camera_up(poses):
    """Mean up direction of the cameras, -R (0,1,0)"""
    up = -poses.matrices()[:,:,1].mean(axis=0)
    n = np.linalg.norm(up)
    return up / n if n > 0 else None


def refine(frames, floorplan, matches, config=None, poses=None, gravity=None,
        transform=None):
    """Floorplan-aware bundle adjustment of a scan
    result = refine(frames, floorplan, matches, config=None)

frames      list of dat.Frame
floorplan   Floorplan2D
matches     list of KeypointMatch or a MatchSet
config      BAConfig
poses       starting poses; defaults to the frames' initial poses
gravity     optional known gravity vector in the input coordinates
transform   optional align.SimilarityTransform to use instead of
            estimating yaw, scale, and shift

The semantic clouds are built with the starting poses, the floorplan is
aligned with the scan, and the poses are leveled when gravity is off
the -y axis.  After the optimization the poses are rotated back into
the input coordinates.  Returns a RefineResult.
"""
    if config is None:
        config = BAConfig()
    if poses is None:
        poses = fb.dat.initial_poses(frames)
    clouds = fb.clouds.build_semantic_clouds(frames, poses, config.stride)
    alignment = fb.align.align(clouds.full, floorplan, gravity=gravity,
            up_prior=camera_up(poses), viewpoints=poses.centers(), transform=transform)
    T = alignment.transform
    level = T.level
    if not T.is_level:
        poses = poses.left_multiply(level)
        clouds = fb.clouds.transform_clouds(clouds, level)
    fp3d = alignment.model.transformed(fb.align.SimilarityTransform(T.yaw, T.scale, T.shift))

    floor_model = None
    if len(clouds.floor) >= 3:
        try:
            floor_model = FloorModel.fit(clouds.floor.points)
        except fb.utility.FBAnalysisError:
            fb.utility.print_warning('The floor plane could not be fitted.')
    refined,log = optimize_poses(frames, matches, clouds, fp3d, config, poses,
            floor_model, floorplan)
    if not T.is_level:
        refined = refined.left_multiply(level.T)
    return RefineResult(refined, log, alignment, level, floor_model, fp3d)
