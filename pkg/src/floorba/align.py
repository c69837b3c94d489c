"""floorba scan-to-floorplan alignment

The alignment brings the 3D floorplan into the coordinates of the scan.
It is a chain of four stages,

    estimate_gravity()      most common normal direction on a sphere
    build_boundary_scan()   drop the floor and the furniture
    estimate_yaw()          four candidate rotations about the y-axis
    estimate_scale_shift()  match the x and z extents and centers

and align() runs them in order.  The result is a SimilarityTransform
that maps floorplan coordinates onto scan coordinates,

    p_scan = L^T ( D(s) R_y(yaw) p_fp + shift )

where D(s) scales x and z by s and leaves y alone, and L is the
leveling rotation that takes the scan into its gravity-aligned frame.
"""

import numpy as np
from scipy.spatial import cKDTree
import floorba as fb


class SimilarityTransform:
    """Floorplan to scan transform
    T = SimilarityTransform(yaw=0., scale=1., shift=(0,0,0), level=None)

yaw     rotation about the y-axis in radians (geometry.rot_y convention)
scale   positive scale of the x and z coordinates
shift   3-vector in meters; its y component is always zero
level   3x3 rotation taking the scan into its gravity-aligned frame, or
        None for the identity
"""
    def __init__(self, yaw=0., scale=1., shift=(0.,0.,0.), level=None):
        self.yaw = float(yaw)
        self.scale = float(scale)
        if not self.scale > 0:
            raise fb.utility.FBParamError('scale must be positive: %r'%scale)
        self.shift = np.array(shift, dtype=float).reshape(3)
        self.shift[1] = 0.
        self.level = np.eye(3) if level is None else np.array(level, dtype=float).reshape(3,3)

    def __repr__(self):
        return 'SimilarityTransform(yaw=%r, scale=%r, shift=%r)'%(
                self.yaw, self.scale, self.shift.tolist())

    @property
    def is_level(self):
        return np.allclose(self.level, np.eye(3), rtol=0., atol=1e-12)

    def affine(self):
        """The linear part A and offset b so that p_scan = A p_fp + b"""
        D = np.diag([self.scale, 1., self.scale])
        A = self.level.T @ D @ fb.geometry.rot_y(self.yaw)
        return A, self.level.T @ self.shift

    def apply(self, p):
        """Map (...,3) floorplan points onto the scan"""
        A,b = self.affine()
        return np.asarray(p, dtype=float) @ A.T + b

    def inverse_apply(self, p):
        """Map (...,3) scan points into floorplan coordinates"""
        A,b = self.affine()
        return (np.asarray(p, dtype=float) - b) @ np.linalg.inv(A).T

    def apply_xz(self, uv):
        """Map (...,2) floorplan coordinates in the gravity-aligned frame

The leveling rotation is not applied.
"""
        uv = np.asarray(uv, dtype=float)
        c = np.cos(self.yaw)
        s = np.sin(self.yaw)
        # rot_y acting on (x, z)
        x = self.scale * (c*uv[...,0] + s*uv[...,1]) + self.shift[0]
        z = self.scale * (-s*uv[...,0] + c*uv[...,1]) + self.shift[2]
        return np.stack((x,z), axis=-1)

    def inverse(self):
        """The inverse transform, scan onto floorplan

Only defined when the transform carries no leveling rotation.
"""
        if not self.is_level:
            raise fb.utility.FBParamError('A leveled transform has no inverse of the same form.')
        Rinv = fb.geometry.rot_y(-self.yaw)
        return SimilarityTransform(-self.yaw, 1./self.scale,
                -(Rinv @ self.shift) / self.scale)

    def to_items(self):
        """The transform as a list of (key, value) report items

The yaw is given in radians and again in the configured 'unit_angle'.
"""
        unit = fb.config['unit_angle']
        return [('yaw', self.yaw),
                ('yaw_' + unit, float(fb.units.angle(self.yaw, 'rad', unit))),
                ('scale', self.scale),
                ('shift', self.shift),
                ('level', self.level)]

    @classmethod
    def from_items(cls, items):
        """Rebuild a transform from a dictionary of report strings"""
        try:
            shift = [float(x) for x in items['shift'].split()]
            level = None
            if 'level' in items:
                level = np.array([float(x) for x in items['level'].split()]).reshape(3,3)
            return cls(float(items['yaw']), float(items['scale']), shift, level)
        except (KeyError, ValueError) as err:
            raise fb.utility.FBFileError('Malformed transform record: %s'%err)


class AlignResult:
    """The outcome of align()

transform   SimilarityTransform
floorplan3d the 3D floorplan mapped into scan coordinates
model       the same 3D floorplan in floorplan coordinates
boundary    the boundary scan, in the gravity-aligned frame
diagnostics dictionary of per-stage values
"""
    def __init__(self, transform, floorplan3d, boundary, diagnostics, model=None):
        self.transform = transform
        self.model = model
        self.floorplan3d = floorplan3d
        self.boundary = boundary
        self.diagnostics = diagnostics

    def __repr__(self):
        return 'AlignResult(%r)'%self.transform




####################################
# Sphere binning
####################################
_icosphere_cache = {}

def icosphere(level):
    """Vertices of a subdivided icosahedron on the unit sphere
    V = icosphere(level)

Each subdivision halves the edges.  Level 0 has 12 vertices, level 4
has 2562 with neighbors roughly 4 degrees apart.
"""
    if level in _icosphere_cache:
        return _icosphere_cache[level]
    t = (1. + np.sqrt(5.)) / 2.
    V = [[-1,t,0],[1,t,0],[-1,-t,0],[1,-t,0],
            [0,-1,t],[0,1,t],[0,-1,-t],[0,1,-t],
            [t,0,-1],[t,0,1],[-t,0,-1],[-t,0,1]]
    F = [[0,11,5],[0,5,1],[0,1,7],[0,7,10],[0,10,11],
            [1,5,9],[5,11,4],[11,10,2],[10,7,6],[7,1,8],
            [3,9,4],[3,4,2],[3,2,6],[3,6,8],[3,8,9],
            [4,9,5],[2,4,11],[6,2,10],[8,6,7],[9,8,1]]
    V = [np.array(v, dtype=float)/np.linalg.norm(v) for v in V]
    for _ in range(level):
        mid = {}
        newF = []
        def midpoint(a, b):
            key = (min(a,b), max(a,b))
            if key not in mid:
                m = V[a] + V[b]
                V.append(m/np.linalg.norm(m))
                mid[key] = len(V)-1
            return mid[key]
        for a,b,c in F:
            ab = midpoint(a,b)
            bc = midpoint(b,c)
            ca = midpoint(c,a)
            newF += [[a,ab,ca],[b,bc,ab],[c,ca,bc],[ab,bc,ca]]
        F = newF
    out = np.array(V)
    _icosphere_cache[level] = out
    return out


def _sphere_level(bin_deg):
    # Edge angle of the level-0 icosahedron is 63.43 degrees
    level = 0
    edge = 63.43
    while edge > bin_deg and level < 6:
        edge /= 2.
        level += 1
    return level




def estimate_gravity(cloud, up_prior=None, bin_deg=None):
    """Estimate the gravity direction from the normals of a scan
    g, confident = estimate_gravity(cloud, up_prior=None, bin_deg=None)

The valid normals are binned on an icosphere whose neighboring bins are
no more than bin_deg apart (configured 'gravity_bin_deg').  Opposite
bins are pooled so that floors and ceilings vote together.  The most
populated bin is refined by averaging the normals that fell in it.

up_prior is an optional estimate of the world up direction, e.g. the
average up axis of the cameras.  When it is given, only bins within 45
degrees of it compete and the result points away from it.  Otherwise
the sign is chosen so that gravity points toward the larger of the two
planar masses at either end of the axis, which is normally the floor.

confident is False when the top bin holds fewer than twice as many
normals as the best bin outside its neighborhood.
"""
    if bin_deg is None:
        bin_deg = fb.config['gravity_bin_deg']
    if not cloud.has_normals:
        raise fb.utility.FBParamError('Gravity estimation needs a cloud with normals.')
    valid = cloud.normal_valid
    normals = cloud.normals[valid]
    points = cloud.points[valid]
    if normals.shape[0] < 100:
        raise fb.utility.FBAnalysisError(
                'Gravity estimation needs at least 100 valid normals; found %d.'%normals.shape[0])

    V = icosphere(_sphere_level(bin_deg))
    tree = cKDTree(V)
    _,bins = tree.query(normals)
    count = np.bincount(bins, minlength=len(V)).astype(float)
    _,antipode = tree.query(-V)
    pooled = count + count[antipode]

    candidates = np.ones(len(V), dtype=bool)
    if up_prior is not None:
        up = np.asarray(up_prior, dtype=float)
        up = up / np.linalg.norm(up)
        candidates = V @ up > np.cos(np.pi/4)
    score = np.where(candidates, pooled, -1.)
    top = int(np.argmax(score))
    axis = V[top]

    # Second mode, outside the neighborhood of the top bin
    near = np.abs(V @ axis) > np.cos(np.radians(2*bin_deg))
    others = np.where(candidates & ~near, pooled, 0.)
    second = others.max() if others.size else 0.
    confident = bool(pooled[top] >= 2*second)

    # Refine with the member normals, folded onto the axis
    members = (bins == top) | (bins == antipode[top])
    folded = normals[members] * np.sign(normals[members] @ axis)[:,np.newaxis]
    axis = folded.sum(axis=0)
    axis /= np.linalg.norm(axis)

    if up_prior is not None:
        g = -axis if axis @ up > 0 else axis
    else:
        s = points[members] @ axis
        mid = 0.5*(s.min() + s.max())
        low = np.count_nonzero(s < mid)
        high = np.count_nonzero(s > mid)
        # The floor lies at the end holding the larger mass
        g = -axis if low >= high else axis

    if not confident:
        fb.utility.print_warning('The gravity estimate has low confidence; '
                'the top normal bin holds %d normals and the runner-up %d.'%(
                pooled[top], second))
    return g, confident


def leveling_rotation(g, tolerance_deg=None):
    """Rotation taking the gravity vector g onto -y
    L = leveling_rotation(g, tolerance_deg=None)

Returns the identity when g is already within tolerance_deg
(configured 'level_tolerance_deg') of -y.
"""
    if tolerance_deg is None:
        tolerance_deg = fb.config['level_tolerance_deg']
    g = np.asarray(g, dtype=float)
    g = g / np.linalg.norm(g)
    if np.degrees(np.arccos(np.clip(-g[1], -1., 1.))) <= tolerance_deg:
        return np.eye(3)
    return fb.geometry.rotation_between(g, [0.,-1.,0.])


def _histogram_peak(y, lo, hi, hist_bin):
    """Center of the most populated height bin between lo and hi of the range

Returns None unless the peak holds three times the median count of the
non-empty bins.
"""
    ymin = y.min()
    nbins = max(int(np.ceil((y.max() - ymin) / hist_bin)), 1)
    hist,edges = np.histogram(y, bins=nbins, range=(ymin, ymin + nbins*hist_bin))
    if nbins < 3:
        return None
    start = int(np.floor(lo*nbins))
    stop = max(int(np.ceil(hi*nbins)), start+1)
    peak = start + int(np.argmax(hist[start:stop]))
    if hist[peak] < 3*np.median(hist[hist > 0]):
        return None
    return 0.5*(edges[peak] + edges[peak+1])


def build_boundary_scan(cloud, hist_bin=None, floor_margin=None, cell=None,
        fraction=None, percentile=None, require_floor=True):
    """Remove the floor and the furniture from a gravity-aligned scan
    boundary, floor_y = build_boundary_scan(cloud)

Floor removal
    The y-coordinates are histogrammed with bins of hist_bin meters.
The floor is the most populated bin in the lower half of the height
range.  It must hold at least three times the median count of the
non-empty bins; otherwise FBAnalysisError is raised.  With
require_floor=False, a missing floor is only warned about, nothing is
removed, and floor_y is returned as None.  Points below
floor_y + floor_margin are removed.  A ceiling peak in the upper half
is removed the same way.

Furniture removal
    The remaining points are gridded in (x, z) with square cells of
'cell' meters.  Cells whose points span at least 'fraction' of the
remaining height are wall cells.  Every cell holding fewer points than
the 'percentile' percentile of the wall-cell counts is an outlier and
is removed, as is every cell that is not a wall cell.  Low tables fail
the span test; sparse tall objects such as door frames fail the count.

Defaults come from 'hist_bin', 'floor_margin', 'occupancy_cell',
'furniture_fraction', and 'furniture_percentile'.  Raises
FBAnalysisError for an empty input or output.
"""
    if hist_bin is None:
        hist_bin = fb.config['hist_bin']
    if floor_margin is None:
        floor_margin = fb.config['floor_margin']
    if cell is None:
        cell = fb.config['occupancy_cell']
    if fraction is None:
        fraction = fb.config['furniture_fraction']
    if percentile is None:
        percentile = fb.config['furniture_percentile']

    if len(cloud) == 0:
        fb.utility.print_error('The boundary scan needs a non-empty cloud.')
        raise fb.utility.FBAnalysisError('Empty cloud.')
    y = cloud.points[:,1]
    keep = np.ones(len(cloud), dtype=bool)
    floor_y = _histogram_peak(y, 0., 0.5, hist_bin)
    if floor_y is None:
        if require_floor:
            fb.utility.print_error('No floor peak in the height histogram.')
            raise fb.utility.FBAnalysisError('The height histogram has no detectable floor peak.')
        fb.utility.print_warning('No floor peak in the height histogram; '
                'the floor is not removed.')
    else:
        keep &= y >= floor_y + floor_margin
    ceiling_y = _histogram_peak(y, 0.5, 1., hist_bin)
    if ceiling_y is not None:
        keep &= y <= ceiling_y - floor_margin

    I = np.nonzero(keep)[0]
    if I.size:
        p = cloud.points[I]
        height = p[:,1].max() - p[:,1].min()
        ij = np.floor(p[:,[0,2]] / cell).astype(np.int64)
        _,cell_id = np.unique(ij, axis=0, return_inverse=True)
        cell_id = cell_id.reshape(-1)
        ncell = cell_id.max() + 1
        count = np.bincount(cell_id, minlength=ncell)
        top = np.full(ncell, -np.inf)
        bottom = np.full(ncell, np.inf)
        np.maximum.at(top, cell_id, p[:,1])
        np.minimum.at(bottom, cell_id, p[:,1])
        wall = (top - bottom) >= fraction * height
        ok = np.zeros(ncell, dtype=bool)
        if np.any(wall):
            ok = wall & (count >= np.percentile(count[wall], percentile))
        I = I[ok[cell_id]]

    if I.size == 0:
        fb.utility.print_error('The boundary scan is empty; no wall structure was found.')
        raise fb.utility.FBAnalysisError('Empty boundary scan.')
    return cloud.subset(I), floor_y


def horizontal_directions(normals, bin_deg=None, min_fraction=0.1):
    """The dominant horizontal normal direction and its orthogonal partner
    phi1, phi2 = horizontal_directions(normals)

Normals with a vertical component above sin(30 deg) are ignored.  The
horizontal angles (geometry.yaw_of) are folded modulo pi and binned.
phi1 is the refined center of the fullest bin; phi2 = phi1 + pi/2 must
be supported by at least min_fraction of phi1's count.  Raises
FBAnalysisError when fewer than two directions are found.
"""
    if bin_deg is None:
        bin_deg = fb.config['gravity_bin_deg']
    normals = np.asarray(normals, dtype=float).reshape(-1,3)
    h = normals[np.abs(normals[:,1]) < 0.5]
    if h.shape[0] == 0:
        raise fb.utility.FBAnalysisError('No horizontal normals.')
    phi = np.mod(fb.geometry.yaw_of(h), np.pi)
    nb = max(int(round(180. / bin_deg)), 4)
    width = np.pi / nb
    idx = np.floor(phi / width).astype(np.int64) % nb
    count = np.bincount(idx, minlength=nb)
    # Window of three bins, wrapping at pi
    window = count + np.roll(count, 1) + np.roll(count, -1)
    top = int(np.argmax(window))
    # Average the doubled angles of the members
    members = np.abs(((phi - (top+0.5)*width + np.pi/2) % np.pi) - np.pi/2) <= 1.5*width
    phi1 = 0.5*np.arctan2(np.sin(2*phi[members]).sum(), np.cos(2*phi[members]).sum())
    phi1 = np.mod(phi1, np.pi)
    phi2 = np.mod(phi1 + np.pi/2, np.pi)
    support = np.count_nonzero(
            np.abs(((phi - phi2 + np.pi/2) % np.pi) - np.pi/2) <= 1.5*width)
    if support < min_fraction * np.count_nonzero(members):
        fb.utility.print_error('Only one horizontal direction dominates the normals.')
        raise fb.utility.FBAnalysisError('Fewer than two orthogonal horizontal directions.')
    return phi1, phi2


def floorplan_direction(fp3d):
    """The dominant horizontal normal angle of the floorplan walls, modulo pi

Wall normals are weighted by segment length.
"""
    seg = fp3d.segments
    L = np.hypot(seg[:,2]-seg[:,0], seg[:,3]-seg[:,1])
    phi = np.mod(fb.geometry.yaw_of(fp3d.normals), np.pi)
    nb = 36
    width = np.pi/nb
    idx = np.floor(phi/width).astype(np.int64) % nb
    w = np.bincount(idx, weights=L, minlength=nb)
    window = w + np.roll(w, 1) + np.roll(w, -1)
    top = int(np.argmax(window))
    members = np.abs(((phi - (top+0.5)*width + np.pi/2) % np.pi) - np.pi/2) <= 1.5*width
    out = 0.5*np.arctan2((L*np.sin(2*phi))[members].sum(), (L*np.cos(2*phi))[members].sum())
    return np.mod(out, np.pi)


def estimate_scale_shift(boundary, fp3d, yaw, align_scale=None):
    """Scale and shift that match the floorplan to the boundary scan
    T = estimate_scale_shift(boundary, fp3d, yaw)

fp3d is in floorplan coordinates and yaw is applied to it first.  The
scale is the mean of the x-range ratio and the z-range ratio of the
boundary scan to the rotated floorplan segments.  The shift makes the
centers of the two bounding boxes coincide.  y is not touched.  With
align_scale False (configured 'align_scale') the scale is fixed at 1.

Raises FBAnalysisError when either extent is zero.
"""
    if align_scale is None:
        align_scale = fb.config['align_scale']
    seg = fp3d.segments
    uv = np.concatenate((seg[:,:2], seg[:,2:]), axis=0)
    rot = SimilarityTransform(yaw).apply_xz(uv)
    p = boundary.points[:,[0,2]]
    if p.shape[0] == 0:
        raise fb.utility.FBAnalysisError('Empty boundary scan.')
    fmin = rot.min(axis=0)
    fmax = rot.max(axis=0)
    smin = p.min(axis=0)
    smax = p.max(axis=0)
    frange = fmax - fmin
    srange = smax - smin
    if np.any(frange < 1e-9) or np.any(srange < 1e-9):
        fb.utility.print_error('Scale estimation needs a non-zero extent in x and z.')
        raise fb.utility.FBAnalysisError('Degenerate extent: floorplan %r, scan %r'%(
                frange.tolist(), srange.tolist()))
    scale = float(np.mean(srange / frange)) if align_scale else 1.
    center = 0.5*(smin + smax) - scale * 0.5*(fmin + fmax)
    return SimilarityTransform(yaw, scale, (center[0], 0., center[1]))


def _mean_nn(points, targets):
    d,_ = cKDTree(targets).query(points)
    return float(np.mean(d))


def yaw_candidates(boundary, fp3d, align_scale=None):
    """The four candidate transforms and their costs
    candidates = yaw_candidates(boundary, fp3d)

Returns a list of (SimilarityTransform, cost) pairs.  The candidates
rotate the dominant floorplan wall normal onto each of the two dominant
horizontal scan normals, in both senses.  The cost is the mean distance
from the boundary points to their nearest transformed floorplan points.
"""
    if len(boundary) == 0 or len(fp3d.points) == 0:
        raise fb.utility.FBAnalysisError('Yaw estimation needs a boundary scan and a floorplan.')
    if not boundary.has_normals:
        k = min(fb.config['normal_k'], len(boundary)-1)
        boundary = fb.geometry.estimate_normals(boundary, k)
    phi1,phi2 = horizontal_directions(boundary.valid_normals())
    phif = floorplan_direction(fp3d)
    out = []
    for target in (phi1, phi1+np.pi, phi2, phi2+np.pi):
        yaw = np.mod(target - phif + np.pi, 2*np.pi) - np.pi
        T = estimate_scale_shift(boundary, fp3d, yaw, align_scale)
        # Boundary points live in the gravity-aligned frame
        A,b = SimilarityTransform(T.yaw, T.scale, T.shift).affine()
        cost = _mean_nn(boundary.points, fp3d.points @ A.T + b)
        out.append((T, cost))
    return out


def estimate_yaw(boundary, fp3d, align_scale=None):
    """The yaw of the best of the four candidates
    yaw = estimate_yaw(boundary, fp3d)

See yaw_candidates().  Raises FBAnalysisError when the scan or the
floorplan has fewer than two horizontal directions.
"""
    candidates = yaw_candidates(boundary, fp3d, align_scale)
    costs = [c for _,c in candidates]
    return candidates[int(np.argmin(costs))][0].yaw


def align(scan, floorplan, gravity=None, up_prior=None, viewpoints=None, transform=None):
    """Align a floorplan with a scan
    result = align(scan, floorplan)

scan        geometry.PointCloud in world coordinates.  Normals are
            estimated when it carries none.
floorplan   floorplan.Floorplan2D or an already built Floorplan3D in
            floorplan coordinates.  A 2D floorplan is extruded between
            the lowest and the highest point of the leveled scan.
gravity     optional known gravity vector (e.g. from an IMU); skips the
            gravity stage
up_prior    optional world up estimate passed to estimate_gravity()
viewpoints  optional camera centers used to orient the normals
transform   optional SimilarityTransform to use instead of estimating
            yaw, scale, and shift

Returns an AlignResult.  Its diagnostics hold the gravity vector and
its confidence, the floor height, the boundary size, the four candidate
costs, and the final mean distance from the boundary to the floorplan.
"""
    diagnostics = {}
    if len(scan) == 0:
        raise fb.utility.FBAnalysisError('Cannot align an empty scan.')
    if not scan.has_normals:
        k = min(fb.config['normal_k'], len(scan)-1)
        scan = fb.geometry.estimate_normals(scan, k, viewpoints)

    if gravity is None:
        g,confident = estimate_gravity(scan, up_prior)
    else:
        g = np.asarray(gravity, dtype=float)
        g = g / np.linalg.norm(g)
        confident = True
    diagnostics['gravity'] = g
    diagnostics['gravity_confident'] = confident
    level = leveling_rotation(g)
    leveled = scan.transformed(level)

    boundary,floor_y = build_boundary_scan(leveled)
    diagnostics['floor_y'] = floor_y
    diagnostics['boundary_points'] = len(boundary)

    if isinstance(floorplan, fb.floorplan.Floorplan2D):
        y = leveled.points[:,1]
        fp3d = fb.floorplan.build_floorplan3d(floorplan, y.min(), y.max())
    else:
        fp3d = floorplan

    if transform is None:
        candidates = yaw_candidates(boundary, fp3d)
        costs = [c for _,c in candidates]
        best = candidates[int(np.argmin(costs))][0]
        diagnostics['candidate_yaw'] = [T.yaw for T,_ in candidates]
        diagnostics['candidate_cost'] = costs
    else:
        best = transform
    T = SimilarityTransform(best.yaw, best.scale, best.shift, level)
    A,b = SimilarityTransform(best.yaw, best.scale, best.shift).affine()
    diagnostics['residual'] = _mean_nn(boundary.points, fp3d.points @ A.T + b)
    return AlignResult(T, fp3d.transformed(T), boundary, diagnostics, fp3d)
