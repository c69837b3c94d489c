"""floorba floorplan model

A 2D floorplan is a list of wall segments in the horizontal plane.  The
floorplan coordinates (u, v) map onto the world coordinates (x, z) so
that a floorplan drawn on the floor of a gravity-aligned scan needs no
further rotation.

The 3D floorplan extrudes every segment into a vertical rectangle that
spans the height of the scan, samples it with random points, and keeps
the analytic plane of each wall.  Those are the targets of the walls
loss terms.

    Floorplan2D         segments (meters)
    Floorplan3D         sampled rectangles and wall planes
    build_floorplan3d() extrude and sample
    nearest_floorplan_point()
    nearest_segment_distance()
"""

import numpy as np
from scipy.spatial import cKDTree
import floorba as fb


class FloorplanSegment:
    """One wall segment
    seg = FloorplanSegment(u1, v1, u2, v2)
"""
    def __init__(self, u1, v1, u2, v2):
        self.u1 = float(u1)
        self.v1 = float(v1)
        self.u2 = float(u2)
        self.v2 = float(v2)

    def __repr__(self):
        return 'FloorplanSegment(%r, %r, %r, %r)'%(self.u1, self.v1, self.u2, self.v2)

    def length(self):
        return np.hypot(self.u2 - self.u1, self.v2 - self.v1)


class Floorplan2D:
    """A 2D floorplan made of wall segments
    fp = Floorplan2D(segments, units_per_meter=1.)

segments is an (S,4) array-like of (u1, v1, u2, v2) rows already
resolved to meters.  units_per_meter records the units of the source
file so that the floorplan can be written back in them.

Raises FBDataError for an empty floorplan or a segment shorter than
1e-6 m.
"""
    def __init__(self, segments, units_per_meter=1.):
        seg = np.array(segments, dtype=float).reshape(-1,4)
        if seg.shape[0] == 0:
            raise fb.utility.FBDataError('The floorplan has no segments.')
        units_per_meter = float(units_per_meter)
        if not units_per_meter > 0:
            raise fb.utility.FBParamError('units_per_meter must be positive: %r'%units_per_meter)
        L = np.hypot(seg[:,2]-seg[:,0], seg[:,3]-seg[:,1])
        bad = np.nonzero(~(L > 1e-6))[0]
        if bad.size:
            raise fb.utility.FBDataError('Segment %d has zero length: %r'%(
                    bad[0], seg[bad[0]].tolist()))
        self.segments = seg
        self.units_per_meter = units_per_meter

    def __len__(self):
        return self.segments.shape[0]

    def __getitem__(self, index):
        return FloorplanSegment(*self.segments[index])

    def __iter__(self):
        for ii in range(len(self)):
            yield self[ii]

    def __repr__(self):
        return 'Floorplan2D(<%d segments>)'%len(self)

    @property
    def a(self):
        """(S,2) first endpoints"""
        return self.segments[:,:2]

    @property
    def b(self):
        """(S,2) second endpoints"""
        return self.segments[:,2:]

    def lengths(self):
        return np.hypot(self.segments[:,2]-self.segments[:,0],
                self.segments[:,3]-self.segments[:,1])

    def bounds(self):
        """((umin, vmin), (umax, vmax))"""
        uu = self.segments[:,[0,2]]
        vv = self.segments[:,[1,3]]
        return (uu.min(), vv.min()), (uu.max(), vv.max())

    def transformed(self, transform):
        """Map the segments through a SimilarityTransform (x and z only)"""
        a = transform.apply_xz(self.a)
        b = transform.apply_xz(self.b)
        return Floorplan2D(np.hstack((a,b)), self.units_per_meter)


class Floorplan3D:
    """The extruded, sampled floorplan
    fp3d = Floorplan3D(segments, y_min, y_max, points, segment_id,
            normals, offsets)

Users will normally call build_floorplan3d() instead.

segments    (S,4) floorplan segments in meters
y_min/y_max extrusion limits
points      (M,3) sampled wall points
segment_id  (M,) the segment each point was sampled from
normals     (S,3) wall plane normals
offsets     (S,) wall plane offsets, n.x + d = 0

The KD-tree over the sampled points is built on first use.
"""
    def __init__(self, segments, y_min, y_max, points, segment_id, normals, offsets):
        self.segments = np.asarray(segments, dtype=float).reshape(-1,4)
        self.y_min = float(y_min)
        self.y_max = float(y_max)
        self.points = np.asarray(points, dtype=float).reshape(-1,3)
        self.segment_id = np.asarray(segment_id, dtype=np.int64)
        self.normals = np.asarray(normals, dtype=float).reshape(-1,3)
        self.offsets = np.asarray(offsets, dtype=float).reshape(-1)
        self._tree = None

    def __repr__(self):
        return 'Floorplan3D(<%d walls, %d points>)'%(len(self.offsets), len(self.points))

    @property
    def tree(self):
        if self._tree is None:
            self._tree = cKDTree(self.points)
        return self._tree

    @property
    def wall_planes(self):
        """List of the wall planes as geometry.Plane objects"""
        return [fb.geometry.Plane(n, d) for n,d in zip(self.normals, self.offsets)]

    def wall_rects(self):
        """(S,4,3) rectangle corners
(u1,ymin,v1), (u1,ymax,v1), (u2,ymin,v2), (u2,ymax,v2)
"""
        S = self.segments
        out = np.empty((S.shape[0],4,3))
        out[:,0] = np.stack((S[:,0], np.full(len(S), self.y_min), S[:,1]), axis=1)
        out[:,1] = np.stack((S[:,0], np.full(len(S), self.y_max), S[:,1]), axis=1)
        out[:,2] = np.stack((S[:,2], np.full(len(S), self.y_min), S[:,3]), axis=1)
        out[:,3] = np.stack((S[:,2], np.full(len(S), self.y_max), S[:,3]), axis=1)
        return out

    def transformed(self, transform):
        """Map the floorplan model through a SimilarityTransform
    new = fp3d.transformed(T)

Points move with T.apply(); planes are mapped through the inverse
transpose of its linear part.  Segments are mapped in x and z.
"""
        A,b = transform.affine()
        points = self.points @ A.T + b
        Ainv = np.linalg.inv(A)
        normals = self.normals @ Ainv
        offsets = self.offsets - normals @ b
        nn = np.linalg.norm(normals, axis=1)
        normals = normals / nn[:,np.newaxis]
        offsets = offsets / nn
        seg = np.hstack((transform.apply_xz(self.segments[:,:2]),
                transform.apply_xz(self.segments[:,2:])))
        return Floorplan3D(seg, self.y_min, self.y_max, points,
                self.segment_id, normals, offsets)




def wall_plane(u1, v1, u2, v2):
    """Vertical plane through a segment
    n, d = wall_plane(u1, v1, u2, v2)

The normal is horizontal and points to the left of the direction from
the first endpoint to the second as seen from above.
"""
    du = u2 - u1
    dv = v2 - v1
    L = np.hypot(du, dv)
    n = np.array([-dv, 0., du]) / L
    return n, -(n[0]*u1 + n[2]*v1)


def build_floorplan3d(fp, y_min, y_max, density=None, seed=None):
    """Extrude and sample a 2D floorplan
    fp3d = build_floorplan3d(fp, y_min, y_max, density=None, seed=None)

Each segment becomes a vertical rectangle between y_min and y_max that
receives ceil(area * density) points drawn uniformly from a generator
seeded with 'seed'.  density is in points per square meter.  The
configured 'fp_density' and 'fp_seed' are used when they are omitted.
"""
    if density is None:
        density = fb.config['fp_density']
    if seed is None:
        seed = fb.config['fp_seed']
    if fp is None or len(fp) == 0:
        raise fb.utility.FBDataError('The floorplan has no segments.')
    if not density > 0:
        raise fb.utility.FBParamError('Sampling density must be positive: %r'%density)
    if not y_min < y_max:
        raise fb.utility.FBParamError('Expected y_min < y_max; found %r, %r'%(y_min, y_max))

    rng = np.random.default_rng(seed)
    height = y_max - y_min
    points = []
    segment_id = []
    normals = np.zeros((len(fp),3))
    offsets = np.zeros(len(fp))
    for ii,(u1,v1,u2,v2) in enumerate(fp.segments):
        normals[ii],offsets[ii] = wall_plane(u1, v1, u2, v2)
        count = int(np.ceil(np.hypot(u2-u1, v2-v1) * height * density - 1e-9))
        s = rng.random(count)
        y = y_min + height * rng.random(count)
        points.append(np.stack((u1 + s*(u2-u1), y, v1 + s*(v2-v1)), axis=1))
        segment_id.append(np.full(count, ii, dtype=np.int64))
    points = np.concatenate(points, axis=0)
    segment_id = np.concatenate(segment_id)
    return Floorplan3D(fp.segments, y_min, y_max, points, segment_id, normals, offsets)


def nearest_floorplan_point(p, fp3d):
    """Nearest sampled floorplan point
    q, segment_id = nearest_floorplan_point(p, fp3d)

p may be a single 3-vector or an (M,3) array.  Ties are broken toward
the lower sample index.
"""
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    _,ii = fb.geometry.nearest(fp3d.tree, p.reshape(-1,3))
    q = fp3d.points[ii]
    sid = fp3d.segment_id[ii]
    if single:
        return q[0], int(sid[0])
    return q, sid


def segment_distances(p_xz, fp, chunk=20000):
    """Distance from each horizontal point to every segment
    D = segment_distances(p_xz, fp)

Returns the (M,S) matrix.  Large queries are processed in chunks.
"""
    p_xz = np.asarray(p_xz, dtype=float).reshape(-1,2)
    out = np.empty((p_xz.shape[0], len(fp)))
    for start in range(0, p_xz.shape[0], chunk):
        stop = min(start+chunk, p_xz.shape[0])
        out[start:stop] = fb.geometry.segment_distance_2d(p_xz[start:stop], fp.a, fp.b)
    return out


def nearest_segment_distance(p_xz, fp):
    """Distance from horizontal point(s) to the nearest floorplan segment
    d = nearest_segment_distance(p_xz, fp)

p_xz may be a single 2-vector (x, z) or an (M,2) array.
"""
    p_xz = np.asarray(p_xz, dtype=float)
    single = p_xz.ndim == 1
    D = segment_distances(p_xz, fp)
    if D.shape[0] == 0:
        return np.zeros(0)
    d = D.min(axis=1)
    if single:
        return float(d[0])
    return d
