"""floorba reconstruction metrics

None of these metrics needs a ground truth scan except NND and ATE.

    MME     mean map entropy: the differential entropy of a Gaussian
            fitted to each point's radius neighborhood, averaged
    MPV     mean plane variance: the variance of the neighborhood's
            distances to its own best-fit plane, averaged
    MOM     mean map of orthogonal planes: MPV restricted to points of
            three mutually orthogonal planes found in each depth map
    NND     mean distance from the reconstruction to the nearest points
            of a reference scan in the same coordinates
    NSD     mean horizontal distance from the walls cloud to the
            nearest floorplan segments
    ATE     RMS camera center error after a rigid alignment

MME, MPV, and MOM visit at most 'metric_max_points' query points, drawn
with the configured 'seed' when the cloud is larger.  Neighborhoods
with fewer than 'metric_min_points' points are not counted.
"""

import itertools
import numpy as np
from scipy.spatial import cKDTree
import floorba as fb


class MetricsReport:
    """Metric values and the parameters used to compute them
    report = MetricsReport(mme=None, mpv=None, mom=None, nnd=None,
            nsd=None, ate=None, parameters=None)

Metrics that were not computed are None and appear as N/A in the
written report.
"""
    keys = ('mme', 'mpv', 'mom', 'nnd', 'nsd', 'ate')
    # metrics measured in meters
    lengths = ('nnd', 'nsd', 'ate')

    def __init__(self, mme=None, mpv=None, mom=None, nnd=None, nsd=None,
            ate=None, parameters=None):
        self.mme = mme
        self.mpv = mpv
        self.mom = mom
        self.nnd = nnd
        self.nsd = nsd
        self.ate = ate
        self.parameters = {} if parameters is None else dict(parameters)
        for key in self.keys[1:]:
            value = getattr(self, key)
            if value is not None and value < 0:
                raise fb.utility.FBDataError('%s must not be negative: %r'%(key, value))

    def __repr__(self):
        return 'MetricsReport(' + ', '.join('%s=%r'%(k, getattr(self, k))
                for k in self.keys) + ')'

    def __getitem__(self, key):
        if key not in self.keys:
            raise KeyError(key)
        return getattr(self, key)

    def items(self):
        """The report as a list of (key, value) pairs"""
        return [(k, getattr(self, k)) for k in self.keys] + \
                sorted(self.parameters.items())

    def write(self, path):
        fb.dat.write_report(path, self.items())

    @classmethod
    def read(cls, path):
        """Read a report written by write(); N/A reads as None"""
        items = fb.dat.load_report(path)
        values = {}
        for key in cls.keys:
            text = items.pop(key, 'N/A')
            try:
                values[key] = None if text == 'N/A' else float(text)
            except ValueError:
                raise fb.utility.FBFileError('%s: %s is not a number: %r'%(path, key, text))
        return cls(parameters=items, **values)




####################################
# Neighborhood statistics
####################################
def _points(cloud):
    if isinstance(cloud, fb.geometry.PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=float).reshape(-1,3)


def _query_index(M, max_points, seed):
    if max_points is None:
        max_points = fb.config['metric_max_points']
    if seed is None:
        seed = fb.config['seed']
    if M <= max_points:
        return np.arange(M)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(M, size=max_points, replace=False))


def neighborhood_covariances(points, query, radius, min_points, tree=None, chunk=2000):
    """Covariances of the radius neighborhoods of query points
    cov, valid = neighborhood_covariances(points, query, radius, min_points)

cov is (Q,3,3), computed about the neighborhood mean and normalized by
the neighbor count.  Neighbors are taken relative to their query point
so that the result does not depend on where the cloud sits.  valid
flags the neighborhoods holding at least min_points points.
"""
    points = np.asarray(points, dtype=float).reshape(-1,3)
    query = np.asarray(query, dtype=float).reshape(-1,3)
    if tree is None:
        tree = cKDTree(points)
    Q = query.shape[0]
    cov = np.zeros((Q,3,3))
    valid = np.zeros(Q, dtype=bool)
    for start in range(0, Q, chunk):
        stop = min(start+chunk, Q)
        lists = tree.query_ball_point(query[start:stop], radius)
        counts = np.array([len(ll) for ll in lists], dtype=np.int64)
        if counts.sum() == 0:
            continue
        owner = np.repeat(np.arange(stop-start), counts)
        d = points[np.concatenate([np.asarray(ll, dtype=np.int64) for ll in lists])] \
                - query[start:stop][owner]
        n = np.maximum(counts, 1).astype(float)
        mean = np.stack([np.bincount(owner, weights=d[:,ii], minlength=stop-start)
                for ii in range(3)], axis=1) / n[:,np.newaxis]
        for ii in range(3):
            for jj in range(ii, 3):
                s = np.bincount(owner, weights=d[:,ii]*d[:,jj], minlength=stop-start)
                c = s / n - mean[:,ii]*mean[:,jj]
                cov[start:stop,ii,jj] = c
                cov[start:stop,jj,ii] = c
        valid[start:stop] = counts >= min_points
    return cov, valid


def _covariances(cloud, radius, min_points, max_points, seed):
    if radius is None:
        radius = fb.config['metric_radius']
    if min_points is None:
        min_points = fb.config['metric_min_points']
    points = _points(cloud)
    if points.shape[0] == 0:
        raise fb.utility.FBAnalysisError('Metrics need a non-empty cloud.')
    I = _query_index(points.shape[0], max_points, seed)
    cov,valid = neighborhood_covariances(points, points[I], radius, min_points)
    return cov[valid]


def mme(cloud, radius=None, min_points=None, max_points=None, seed=None):
    """Mean map entropy
    h = mme(cloud, radius=None)

For every query point, the entropy 1/2 ln((2 pi e)^3 det C) of its
neighborhood covariance C is computed.  Degenerate neighborhoods
(det C <= 0) are left out.  Raises FBAnalysisError when no neighborhood
qualifies.
"""
    cov = _covariances(cloud, radius, min_points, max_points, seed)
    det = np.linalg.det(cov) if cov.shape[0] else np.zeros(0)
    det = det[det > 0]
    if det.size == 0:
        fb.utility.print_error('MME: no point has a valid neighborhood.')
        raise fb.utility.FBAnalysisError('No valid neighborhoods for MME.')
    return float(np.mean(0.5*np.log((2*np.pi*np.e)**3 * det)))


def mpv(cloud, radius=None, min_points=None, max_points=None, seed=None):
    """Mean plane variance
    v = mpv(cloud, radius=None)

The variance of the neighbors' distances to their best-fit plane is the
smallest eigenvalue of the neighborhood covariance.  Raises
FBAnalysisError when no neighborhood qualifies.
"""
    cov = _covariances(cloud, radius, min_points, max_points, seed)
    if cov.shape[0] == 0:
        fb.utility.print_error('MPV: no point has a valid neighborhood.')
        raise fb.utility.FBAnalysisError('No valid neighborhoods for MPV.')
    w = np.linalg.eigvalsh(cov)[:,0]
    return float(np.mean(np.maximum(w, 0.)))




####################################
# Orthogonal planes
####################################
def ransac_plane(points, normals=None, threshold=None, iterations=None,
        normal_deg=15., rng=None):
    """Find the best supported plane with RANSAC
    plane, inliers = ransac_plane(points, normals=None)

Planes through three random points are scored by the number of points
within threshold (configured 'ransac_threshold') of them.  When normals
are given, an inlier must also have a normal within normal_deg of the
plane normal, which keeps the edges of neighboring planes out.  The
winner is refitted to its inliers.  Returns (None, empty) when fewer
than three points are available.
"""
    if threshold is None:
        threshold = fb.config['ransac_threshold']
    if iterations is None:
        iterations = fb.config['ransac_iterations']
    if rng is None:
        rng = np.random.default_rng(fb.config['seed'])
    points = np.asarray(points, dtype=float).reshape(-1,3)
    M = points.shape[0]
    if M < 3:
        return None, np.zeros(0, dtype=np.int64)
    cos_n = np.cos(np.radians(normal_deg))

    def inliers_of(n, d):
        ok = np.abs(points @ n + d) <= threshold
        if normals is not None:
            ok &= np.abs(normals @ n) >= cos_n
        return ok

    sample = np.stack([rng.choice(M, size=3, replace=False) for _ in range(iterations)])
    p0 = points[sample[:,0]]
    n = np.cross(points[sample[:,1]] - p0, points[sample[:,2]] - p0)
    nn = np.linalg.norm(n, axis=1)
    good = nn > 1e-12
    n = n[good] / nn[good,np.newaxis]
    d = -np.einsum('mi,mi->m', n, p0[good])
    if n.shape[0] == 0:
        return None, np.zeros(0, dtype=np.int64)
    best = -1
    best_count = -1
    chunk = 50
    for start in range(0, n.shape[0], chunk):
        N = n[start:start+chunk]
        ok = np.abs(points @ N.T + d[start:start+chunk]) <= threshold
        if normals is not None:
            ok &= np.abs(normals @ N.T) >= cos_n
        count = ok.sum(axis=0)
        kk = int(np.argmax(count))
        if count[kk] > best_count:
            best_count = int(count[kk])
            best = start + kk
    mask = inliers_of(n[best], d[best])
    if np.count_nonzero(mask) >= 3:
        try:
            plane = fb.geometry.fit_plane(points[mask])
            refit = inliers_of(plane.normal, plane.offset)
            if np.count_nonzero(refit) >= np.count_nonzero(mask):
                return plane, np.nonzero(refit)[0]
        except fb.utility.FBAnalysisError:
            pass
    return fb.geometry.Plane(n[best], d[best]), np.nonzero(mask)[0]


def orthogonal_planes(points, normals=None, ortho_deg=None, max_planes=6,
        min_inliers=None, rng=None, **kwarg):
    """Three mutually orthogonal planes of one depth map
    planes = orthogonal_planes(points, normals=None)

Planes are extracted by sequential RANSAC, removing the inliers of each
one before looking for the next, until max_planes are found or too few
points remain.  Among them, the triple whose normals are pairwise
orthogonal within ortho_deg (configured 'ortho_deg') with the largest
total support is returned as a list of (Plane, inlier indices).
Returns None when no such triple exists.
"""
    if ortho_deg is None:
        ortho_deg = fb.config['ortho_deg']
    points = np.asarray(points, dtype=float).reshape(-1,3)
    M = points.shape[0]
    if min_inliers is None:
        min_inliers = max(3*fb.config['metric_min_points'], int(0.05*M))
    if rng is None:
        rng = np.random.default_rng(fb.config['seed'])
    remaining = np.arange(M)
    found = []
    while len(found) < max_planes and remaining.size >= max(min_inliers, 3):
        plane,inl = ransac_plane(points[remaining],
                None if normals is None else normals[remaining], rng=rng, **kwarg)
        if plane is None or inl.size < min_inliers:
            break
        found.append((plane, remaining[inl]))
        keep = np.ones(remaining.size, dtype=bool)
        keep[inl] = False
        remaining = remaining[keep]

    limit = np.sin(np.radians(ortho_deg))
    best = None
    support = -1
    for triple in itertools.combinations(range(len(found)), 3):
        N = np.array([found[ii][0].normal for ii in triple])
        dots = np.abs(N @ N.T)[np.triu_indices(3, 1)]
        if np.all(dots <= limit):
            total = sum(found[ii][1].size for ii in triple)
            if total > support:
                support = total
                best = triple
    if best is None:
        return None
    return [found[ii] for ii in best]


def mom(frames, poses, clouds=None, radius=None, min_points=None, max_points=None,
        seed=None, info=None, **kwarg):
    """Mean map of orthogonal planes
    m = mom(frames, poses, clouds=None, radius=None)

Each depth map is searched for three mutually orthogonal planes in its
own camera coordinates (see orthogonal_planes()).  Their points are
moved into the world with the frame poses and grouped by the direction
of their plane normals.  Within each group, the plane variance of every
point's radius neighborhood is computed as in mpv().  The result is the
mean over all groups.

clouds is an optional clouds.SemanticClouds built from the same frames,
whose camera-frame coordinates are reused; otherwise the depth maps are
backprojected at the configured 'stride'.  When info is a dictionary,
it receives the lists 'mom_frames_used' and 'mom_frames_skipped' of
frame indices.

Frames without an orthogonal triple are skipped.  Raises
FBAnalysisError when every frame is skipped.
"""
    if radius is None:
        radius = fb.config['metric_radius']
    if min_points is None:
        min_points = fb.config['metric_min_points']
    if seed is None:
        seed = fb.config['seed']
    ortho_deg = kwarg.get('ortho_deg', fb.config['ortho_deg'])
    if len(poses) != len(frames):
        raise fb.utility.FBDataError('Found %d poses for %d frames.'%(len(poses), len(frames)))
    rng = np.random.default_rng(seed)
    R = poses.matrices()

    world = []
    direction = []
    used = []
    skipped = []
    for kk,frame in enumerate(frames):
        if clouds is not None:
            cam = clouds.camera['full'][clouds.frame_index('full') == kk]
        else:
            cam,_,_ = fb.geometry.backproject_grid(frame.depth, frame.intrinsics,
                    fb.config['stride'])
        normals = None
        k = min(fb.config['normal_k'], cam.shape[0]-1)
        if k >= 2:
            normals = fb.geometry.estimate_normals(fb.geometry.PointCloud(cam), k,
                    viewpoints=np.zeros_like(cam)).normals
        planes = None
        if cam.shape[0] >= 3:
            planes = orthogonal_planes(cam, normals, rng=rng, **kwarg)
        if planes is None:
            skipped.append(frame.index)
            continue
        used.append(frame.index)
        for plane,inl in planes:
            world.append(cam[inl] @ R[kk].T + poses.translations[kk])
            direction.append(np.tile(R[kk] @ plane.normal, (inl.size,1)))

    if info is not None:
        info['mom_frames_used'] = used
        info['mom_frames_skipped'] = skipped
    if skipped:
        fb.utility.print_warning('MOM skipped %d frame(s) without three orthogonal planes.'%len(skipped))
    if not used:
        fb.utility.print_error('MOM: no frame shows three orthogonal planes.')
        raise fb.utility.FBAnalysisError('Every frame was skipped by MOM.')

    world = np.concatenate(world, axis=0)
    direction = np.concatenate(direction, axis=0)
    # Group the points by the undirected direction of their plane normal
    group = np.full(world.shape[0], -1, dtype=np.int64)
    cos_g = np.cos(np.radians(max(ortho_deg, 1e-6)))
    ngroup = 0
    while np.any(group < 0):
        free = np.nonzero(group < 0)[0]
        axis = direction[free[0]]
        member = np.abs(direction[free] @ axis) >= cos_g
        group[free[member]] = ngroup
        ngroup += 1

    variances = []
    for gg in range(ngroup):
        I = np.nonzero(group == gg)[0]
        Q = _query_index(I.size, max_points, seed)
        cov,valid = neighborhood_covariances(world[I], world[I][Q], radius, min_points)
        if np.any(valid):
            variances.append(np.maximum(np.linalg.eigvalsh(cov[valid])[:,0], 0.))
    if not variances:
        raise fb.utility.FBAnalysisError('No valid neighborhoods for MOM.')
    return float(np.mean(np.concatenate(variances)))




####################################
# Reference based metrics
####################################
def nnd(recon, reference):
    """Mean nearest-neighbor distance from a reconstruction to a reference
    d = nnd(recon, reference)

Both clouds must already share coordinates.  The measure is directed;
nnd(A, B) and nnd(B, A) differ in general.
"""
    p = _points(recon)
    q = _points(reference)
    if p.shape[0] == 0 or q.shape[0] == 0:
        raise fb.utility.FBAnalysisError('NND needs two non-empty clouds.')
    d,_ = cKDTree(q).query(p)
    return float(np.mean(d))


def nsd(walls_cloud, fp):
    """Mean distance from wall points to their nearest floorplan segments
    d = nsd(walls_cloud, fp)

Points are projected onto the horizontal (x, z) plane.  fp is a
Floorplan2D in the coordinates of the walls cloud.
"""
    p = _points(walls_cloud)
    if p.shape[0] == 0:
        fb.utility.print_error('NSD needs a non-empty walls cloud.')
        raise fb.utility.FBAnalysisError('Empty walls cloud.')
    return float(np.mean(fb.floorplan.nearest_segment_distance(p[:,[0,2]], fp)))


def _centers(poses):
    if isinstance(poses, fb.geometry.PoseArray):
        return poses.centers()
    return np.asarray(poses, dtype=float).reshape(-1,3)


def ate(estimated, reference, align=True):
    """Absolute trajectory error
    e = ate(estimated, reference, align=True)

estimated and reference are PoseArrays (or (N,3) center arrays) of the
same frames.  With align, the estimated centers are first moved by the
rigid motion that best fits them to the reference (no scale).  Returns
the RMS of the remaining center differences.
"""
    E = _centers(estimated)
    G = _centers(reference)
    if E.shape != G.shape or E.shape[0] == 0:
        raise fb.utility.FBDataError('ATE needs two trajectories of the same non-zero length.')
    if align and E.shape[0] >= 2:
        e0 = E.mean(axis=0)
        g0 = G.mean(axis=0)
        H = (E - e0).T @ (G - g0)
        U,_,Vt = np.linalg.svd(H)
        D = np.eye(3)
        D[2,2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.
        Rot = Vt.T @ D @ U.T
        E = (E - e0) @ Rot.T + g0
    return float(np.sqrt(np.mean(np.sum((E - G)**2, axis=1))))




def compute_metrics(frames, poses, floorplan=None, reference=None,
        reference_poses=None, radius=None, stride=None, seed=None, skip=()):
    """All applicable metrics of a posed sequence
    report = compute_metrics(frames, poses, floorplan=None, reference=None)

floorplan       Floorplan2D in world coordinates; NSD is None without it
reference       reference PointCloud; NND is None without it
reference_poses reference PoseArray; ATE is None without it
skip            names of metrics not to compute

A metric whose computation fails is reported as None with a warning.
"""
    if radius is None:
        radius = fb.config['metric_radius']
    if stride is None:
        stride = fb.config['stride']
    clouds = fb.clouds.build_semantic_clouds(frames, poses, stride)
    values = {}

    def attempt(name, fn):
        if name in skip:
            return
        try:
            values[name] = fn()
        except fb.utility.FBAnalysisError as err:
            fb.utility.print_warning('%s is not available: %s'%(name.upper(), err))

    attempt('mme', lambda: mme(clouds.full, radius, seed=seed))
    attempt('mpv', lambda: mpv(clouds.full, radius, seed=seed))
    attempt('mom', lambda: mom(frames, poses, clouds, radius, seed=seed))
    if reference is not None:
        attempt('nnd', lambda: nnd(clouds.full, reference))
    if floorplan is not None:
        if len(clouds.walls):
            attempt('nsd', lambda: nsd(clouds.walls, floorplan))
    else:
        fb.utility.print_warning('No floorplan was given; NSD is not available.')
    if reference_poses is not None:
        values['ate'] = ate(poses, reference_poses)
    parameters = {'radius':radius, 'stride':stride,
            'min_points':fb.config['metric_min_points'],
            'points':len(clouds.full), 'wall_points':len(clouds.walls)}
    return MetricsReport(parameters=parameters, **values)
