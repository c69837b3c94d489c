"""floorba geometry module

This module holds the types and routines that every other module leans
on: camera intrinsics, rigid poses, planes, point clouds, pinhole
backprojection, normal estimation, and total least-squares plane
fitting.

Conventions
    The camera frame has x pointing right, y pointing down, and z
pointing forward along the optical axis.  World coordinates have the
y-axis pointing up once the scan is gravity aligned.  Poses map camera
coordinates to world coordinates,
    p_world = R p_cam + t

Quaternions are stored scalar-last, (x, y, z, w), which is the order
used by scipy.spatial.transform.Rotation and by the trajectory files.

Pose increments
    The optimizer perturbs a pose by a 6-vector, xi = [w, dt], so that
    R <- exp([w]x) R
    t <- t + dt
The rotation increment acts in world axes about the camera center.
With this choice, the gradient of a loss with respect to w for a world
point p = R p_cam + t is a x g, where a = R p_cam is the lever arm and
g is the gradient with respect to p.  pose_gradient() accumulates those
terms for every frame.
"""

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation
import floorba as fb


class CameraIntrinsics:
    """Pinhole camera intrinsics
    intr = CameraIntrinsics(fx, fy, cx, cy, depth_scale=None)

fx, fy are the focal lengths and cx, cy the principal point, all in
pixels.  depth_scale converts the stored depth values into meters.  When
it is omitted, the configured 'depth_scale' is used.
"""
    def __init__(self, fx, fy, cx, cy, depth_scale=None):
        if depth_scale is None:
            depth_scale = fb.config['depth_scale']
        self.fx = float(fx)
        self.fy = float(fy)
        self.cx = float(cx)
        self.cy = float(cy)
        self.depth_scale = float(depth_scale)
        if not (self.fx > 0 and self.fy > 0):
            raise fb.utility.FBParamError('Focal lengths must be positive: fx=%r fy=%r'%(fx,fy))
        if not self.depth_scale > 0:
            raise fb.utility.FBParamError('depth_scale must be positive: %r'%depth_scale)

    def __repr__(self):
        return 'CameraIntrinsics(%r, %r, %r, %r, depth_scale=%r)'%(
                self.fx, self.fy, self.cx, self.cy, self.depth_scale)

    def __eq__(self, other):
        return isinstance(other, CameraIntrinsics) and \
                (self.fx, self.fy, self.cx, self.cy, self.depth_scale) == \
                (other.fx, other.fy, other.cx, other.cy, other.depth_scale)

    def matrix(self):
        """The 3x3 calibration matrix"""
        return np.array([[self.fx, 0., self.cx],
                [0., self.fy, self.cy],
                [0., 0., 1.]])

    def backproject(self, u, v, z):
        """Backproject pixels with metric depth into the camera frame
    p = intr.backproject(u, v, z)

u, v, and z are broadcast against one another.  z is already in meters;
no validity check is performed.  Returns an (..., 3) array.
"""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        z = np.asarray(z, dtype=float)
        return np.stack(np.broadcast_arrays(
                (u - self.cx) * z / self.fx,
                (v - self.cy) * z / self.fy,
                z), axis=-1)

    def project(self, p):
        """Project camera-frame points onto the image
    u, v = intr.project(p)

p is an (..., 3) array.  Points with z <= 0 project to NaN.
"""
        p = np.asarray(p, dtype=float)
        z = p[...,2]
        with np.errstate(divide='ignore', invalid='ignore'):
            zi = np.where(z > 0, 1./z, np.nan)
        return self.fx*p[...,0]*zi + self.cx, self.fy*p[...,1]*zi + self.cy


class Pose:
    """Rigid camera-to-world transform
    pose = Pose(quat, translation)
    pose = Pose()          # identity

quat is a unit quaternion (x, y, z, w) and translation is a 3-vector in
meters.  The quaternion is normalized on construction.
"""
    def __init__(self, quat=(0.,0.,0.,1.), translation=(0.,0.,0.)):
        q = np.array(quat, dtype=float).reshape(4)
        nq = np.linalg.norm(q)
        if not nq > 0:
            raise fb.utility.FBParamError('Quaternion has zero norm.')
        # Quaternions already normalized to working precision are kept
        # as given so that file values survive a round trip
        self.quat = q / nq if abs(nq - 1.) > 1e-12 else q
        self.translation = np.array(translation, dtype=float).reshape(3)

    @classmethod
    def from_matrix(cls, R, t=(0.,0.,0.)):
        """Build a pose from a rotation matrix and a translation"""
        return cls(Rotation.from_matrix(np.asarray(R, dtype=float)).as_quat(), t)

    @classmethod
    def from_rotvec(cls, rotvec, t=(0.,0.,0.)):
        return cls(Rotation.from_rotvec(rotvec).as_quat(), t)

    def __repr__(self):
        return 'Pose(%r, %r)'%(self.quat.tolist(), self.translation.tolist())

    def matrix(self):
        """The 3x3 rotation matrix"""
        return Rotation.from_quat(self.quat).as_matrix()

    def homogeneous(self):
        """The 4x4 homogeneous transform"""
        T = np.eye(4)
        T[:3,:3] = self.matrix()
        T[:3,3] = self.translation
        return T

    def transform(self, p):
        """Map (..., 3) camera-frame points into the world"""
        return np.asarray(p, dtype=float) @ self.matrix().T + self.translation

    def inverse(self):
        R = Rotation.from_quat(self.quat).inv()
        return Pose(R.as_quat(), -R.apply(self.translation))

    def compose(self, other):
        """self * other; apply other first"""
        R = Rotation.from_quat(self.quat)
        return Pose((R * Rotation.from_quat(other.quat)).as_quat(),
                R.apply(other.translation) + self.translation)


class PoseArray:
    """A trajectory of N poses stored as arrays
    poses = PoseArray(quats, translations)

quats is (N,4) scalar-last and translations is (N,3).  PoseArray is the
optimization variable of the bundle adjuster.  It is treated as an
immutable value; retract() and the other operations return new arrays.

Indexing returns a Pose and len() returns N.
"""
    def __init__(self, quats, translations):
        q = np.array(quats, dtype=float).reshape(-1,4)
        t = np.array(translations, dtype=float).reshape(-1,3)
        if q.shape[0] != t.shape[0]:
            raise fb.utility.FBDataError(
                    'Found %d rotations but %d translations.'%(q.shape[0], t.shape[0]))
        nq = np.linalg.norm(q, axis=1)
        if np.any(~(nq > 0)):
            raise fb.utility.FBParamError('Quaternion has zero norm.')
        scale = np.where(np.abs(nq - 1.) > 1e-12, nq, 1.)
        self.quats = q / scale[:,np.newaxis]
        self.translations = t
        self._R = None

    @classmethod
    def from_poses(cls, poses):
        poses = list(poses)
        if not poses:
            return cls(np.zeros((0,4)), np.zeros((0,3)))
        return cls([p.quat for p in poses], [p.translation for p in poses])

    @classmethod
    def identity(cls, N):
        q = np.zeros((N,4))
        q[:,3] = 1.
        return cls(q, np.zeros((N,3)))

    @classmethod
    def from_matrices(cls, R, t):
        return cls(Rotation.from_matrix(np.asarray(R, dtype=float)).as_quat(), t)

    def __len__(self):
        return self.quats.shape[0]

    def __getitem__(self, index):
        return Pose(self.quats[index], self.translations[index])

    def __iter__(self):
        for ii in range(len(self)):
            yield self[ii]

    def __repr__(self):
        return 'PoseArray(<%d poses>)'%len(self)

    def copy(self):
        return PoseArray(self.quats.copy(), self.translations.copy())

    def matrices(self):
        """(N,3,3) rotation matrices"""
        if self._R is None:
            if len(self):
                self._R = Rotation.from_quat(self.quats).as_matrix().reshape(-1,3,3)
            else:
                self._R = np.zeros((0,3,3))
        return self._R

    def centers(self):
        """(N,3) camera centers in the world"""
        return self.translations.copy()

    def arms(self, index, p_cam):
        """Rotate camera-frame points by the rotation of their own frame
    a = poses.arms(index, p_cam)

index is an integer array of frame indices and p_cam is the matching
(M,3) array.  The world points are a + poses.translations[index].
"""
        R = self.matrices()
        return np.einsum('mij,mj->mi', R[index], p_cam)

    def apply(self, index, p_cam):
        """Map per-frame camera points into the world
    p = poses.apply(index, p_cam)
"""
        return self.arms(index, p_cam) + self.translations[index]

    def retract(self, xi):
        """Apply a (N,6) increment [w, dt] and return the new poses
    new = poses.retract(xi)

The rotation is updated as R <- exp([w]x) R and the quaternion is
renormalized.
"""
        xi = np.asarray(xi, dtype=float).reshape(len(self), 6)
        if len(self) == 0:
            return self.copy()
        q = (Rotation.from_rotvec(xi[:,:3]) * Rotation.from_quat(self.quats)).as_quat()
        q /= np.linalg.norm(q, axis=1)[:,np.newaxis]
        return PoseArray(q, self.translations + xi[:,3:])

    def left_multiply(self, R, t=(0.,0.,0.)):
        """Apply a world-frame rigid motion to every pose
    new = poses.left_multiply(R, t)

The new poses are T = [R|t] * T_old.
"""
        R = np.asarray(R, dtype=float)
        Rq = Rotation.from_matrix(R)
        q = (Rq * Rotation.from_quat(self.quats)).as_quat()
        return PoseArray(q, self.translations @ R.T + np.asarray(t, dtype=float))


class Plane:
    """An oriented plane n.x + d = 0
    plane = Plane(normal, offset)

The normal is normalized on construction; the offset is rescaled with
it so that the zero set does not change.
"""
    def __init__(self, normal, offset):
        n = np.array(normal, dtype=float).reshape(3)
        nn = np.linalg.norm(n)
        if not nn > 0:
            raise fb.utility.FBParamError('Plane normal has zero length.')
        self.normal = n / nn
        self.offset = float(offset) / nn

    def __repr__(self):
        return 'Plane(%r, %r)'%(self.normal.tolist(), self.offset)

    def signed_distance(self, p):
        return np.asarray(p, dtype=float) @ self.normal + self.offset

    def distance(self, p):
        return np.abs(self.signed_distance(p))


class PointCloud:
    """A set of 3D points with optional normals and provenance
    cloud = PointCloud(points, normals=None, provenance=None, normal_valid=None)

points      (M,3) coordinates in meters
normals     (M,3) unit normals or None.  Normals that could not be
            estimated are stored as zero vectors and flagged False in
            normal_valid.
provenance  (M,3) integers (frame index, pixel row, pixel column) or None
"""
    def __init__(self, points, normals=None, provenance=None, normal_valid=None):
        self.points = np.array(points, dtype=float).reshape(-1,3)
        M = self.points.shape[0]
        self.normals = None
        self.normal_valid = None
        self.provenance = None
        if normals is not None:
            self.normals = np.array(normals, dtype=float).reshape(-1,3)
            if self.normals.shape[0] != M:
                raise fb.utility.FBDataError('Found %d normals for %d points.'%(
                        self.normals.shape[0], M))
            if normal_valid is None:
                normal_valid = np.linalg.norm(self.normals, axis=1) > 0.5
            self.normal_valid = np.array(normal_valid, dtype=bool).reshape(M)
        if provenance is not None:
            self.provenance = np.array(provenance, dtype=np.int64).reshape(-1,3)
            if self.provenance.shape[0] != M:
                raise fb.utility.FBDataError('Found %d provenance records for %d points.'%(
                        self.provenance.shape[0], M))

    def __len__(self):
        return self.points.shape[0]

    def __repr__(self):
        return 'PointCloud(<%d points%s>)'%(len(self),
                ', normals' if self.has_normals else '')

    @property
    def has_normals(self):
        return self.normals is not None

    def subset(self, index):
        """Return a new cloud holding points[index]"""
        return PointCloud(self.points[index],
                normals = None if self.normals is None else self.normals[index],
                provenance = None if self.provenance is None else self.provenance[index],
                normal_valid = None if self.normal_valid is None else self.normal_valid[index])

    def transformed(self, R, t=(0.,0.,0.)):
        """Apply a rigid transform to points and normals"""
        R = np.asarray(R, dtype=float)
        return PointCloud(self.points @ R.T + np.asarray(t, dtype=float),
                normals = None if self.normals is None else self.normals @ R.T,
                provenance = self.provenance,
                normal_valid = self.normal_valid)

    def valid_normals(self):
        """The (K,3) array of normals that are flagged valid"""
        if self.normals is None:
            return np.zeros((0,3))
        return self.normals[self.normal_valid]




def rot_y(theta):
    """Rotation matrix about the y-axis
    R = rot_y(theta)

R maps (1,0,0) onto (cos theta, 0, -sin theta).
"""
    c = np.cos(theta)
    s = np.sin(theta)
    return np.array([[c, 0., s],[0., 1., 0.],[-s, 0., c]])


def yaw_of(v):
    """The angle of the horizontal vector (x, z) under the rot_y convention
    theta = yaw_of(v)

rot_y(yaw_of(v)) maps (1,0,0) onto the horizontal direction of v.
"""
    v = np.asarray(v, dtype=float)
    return np.arctan2(-v[...,2], v[...,0])


def rotation_between(a, b):
    """The smallest rotation matrix taking unit vector a onto unit vector b"""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = np.dot(a, b)
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # Antiparallel; rotate by pi about any perpendicular axis
        perp = np.cross(a, [1.,0.,0.])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(a, [0.,0.,1.])
        return Rotation.from_rotvec(np.pi * perp / np.linalg.norm(perp)).as_matrix()
    return Rotation.from_rotvec(axis / s * np.arctan2(s, c)).as_matrix()


def backproject_pixel(u, v, depth_raw, intr):
    """Backproject a single pixel into the camera frame
    p = backproject_pixel(u, v, depth_raw, intr)

u is the pixel column and v the pixel row.  depth_raw is the value
stored in the depth grid; it is multiplied by intr.depth_scale.  Raises
FBDepthError when the depth is zero, negative, or not finite.
"""
    z = float(depth_raw)
    if not (np.isfinite(z) and z > 0):
        raise fb.utility.FBDepthError('No depth at pixel (%r, %r): %r'%(u, v, depth_raw))
    return intr.backproject(u, v, z * intr.depth_scale)


def backproject_grid(depth, intr, stride=1):
    """Backproject every valid pixel of a depth grid on a stride lattice
    p_cam, rows, cols = backproject_grid(depth, intr, stride=1)

Pixels with zero or non-finite depth are skipped.  The rows and cols
arrays identify the pixels that produced each point, in row-major order.
"""
    depth = np.asarray(depth)
    rows, cols = np.mgrid[0:depth.shape[0]:stride, 0:depth.shape[1]:stride]
    rows = rows.ravel()
    cols = cols.ravel()
    z = depth[rows, cols].astype(float)
    keep = np.isfinite(z) & (z > 0)
    rows = rows[keep]
    cols = cols[keep]
    p = intr.backproject(cols, rows, z[keep] * intr.depth_scale)
    return p.reshape(-1,3), rows, cols


def transform_point(pose, p):
    """Map a camera-frame point into the world
    q = transform_point(pose, p)

Returns R p + t.
"""
    return pose.transform(p)


def pose_gradient(index, arms, grads, N):
    """Accumulate point gradients into per-frame pose gradients
    G = pose_gradient(index, arms, grads, N)

index   (M,) frame index of each point
arms    (M,3) lever arms R p_cam
grads   (M,3) gradient of the loss with respect to each world point
N       number of frames

Returns an (N,6) array ordered [rotation increment, translation].  The
summation order is fixed by np.bincount, so repeated evaluations give
identical results.
"""
    index = np.asarray(index, dtype=np.int64)
    if index.size == 0:
        return np.zeros((N,6))
    return accumulate(index, np.cross(arms, grads), grads, N)


def accumulate(index, torque, force, N):
    """Sum rotation and translation gradient terms per frame
    G = accumulate(index, torque, force, N)

torque and force are (M,3) arrays of the rotation and translation
components contributed by each term.
"""
    index = np.asarray(index, dtype=np.int64)
    G = np.zeros((N,6))
    if index.size == 0:
        return G
    for jj in range(3):
        G[:,jj] = np.bincount(index, weights=torque[:,jj], minlength=N)
        G[:,jj+3] = np.bincount(index, weights=force[:,jj], minlength=N)
    return G


def nearest(tree, query):
    """Exact nearest neighbors with ties broken toward the lower index
    dist, index = nearest(tree, query)

tree is a scipy.spatial.cKDTree.  Equidistant candidates are resolved
in favor of the smaller data index so that results do not depend on the
tree's internal traversal order.
"""
    query = np.asarray(query, dtype=float).reshape(-1,tree.m)
    if tree.n == 0:
        raise fb.utility.FBParamError('Nearest neighbor query on an empty set.')
    if tree.n == 1 or query.shape[0] == 0:
        d,i = tree.query(query, k=1)
        return np.asarray(d, dtype=float), np.asarray(i, dtype=np.int64)
    d,i = tree.query(query, k=2)
    tie = (d[:,1] <= d[:,0]) & (i[:,1] < i[:,0])
    return d[:,0], np.where(tie, i[:,1], i[:,0]).astype(np.int64)


def estimate_normals(cloud, k=None, viewpoints=None):
    """Estimate per-point normals from k-nearest-neighbor covariances
    out = estimate_normals(cloud, k=None, viewpoints=None)

Each normal is the eigenvector of the smallest eigenvalue of the
covariance of the point and its k nearest neighbors.  When k is omitted
the configured 'normal_k' is used.

Orientation
    viewpoints may be an (M,3) array of the camera center that observed
each point, or an (F,3) array of camera centers indexed through the
cloud's provenance.  Normals are flipped to face their viewpoint.
Without viewpoints, normals are flipped to point away from the cloud
centroid.

Neighborhoods whose covariance has rank below 2 (collinear or repeated
points) produce zero normals flagged False in normal_valid.

Returns a new PointCloud.
"""
    if k is None:
        k = fb.config['normal_k']
    k = int(k)
    pts = cloud.points
    M = pts.shape[0]
    if k < 2:
        raise fb.utility.FBParamError('Normal estimation needs k >= 2.')
    if M < k+1:
        raise fb.utility.FBParamError(
                'Normal estimation needs at least k+1=%d points; found %d.'%(k+1, M))

    tree = cKDTree(pts)
    normals = np.zeros((M,3))
    valid = np.zeros(M, dtype=bool)
    chunk = 50000
    for start in range(0, M, chunk):
        stop = min(start+chunk, M)
        _,nbr = tree.query(pts[start:stop], k=k+1)
        P = pts[nbr]
        P = P - P.mean(axis=1)[:,np.newaxis,:]
        C = np.einsum('mki,mkj->mij', P, P) / (k+1)
        w,V = np.linalg.eigh(C)
        # rank >= 2 means the middle eigenvalue is resolved
        ok = w[:,1] > 1e-10 * np.maximum(w[:,2], 1e-300)
        ok &= w[:,2] > 0
        normals[start:stop] = np.where(ok[:,np.newaxis], V[:,:,0], 0.)
        valid[start:stop] = ok

    # Orient
    if viewpoints is not None:
        viewpoints = np.asarray(viewpoints, dtype=float).reshape(-1,3)
        if viewpoints.shape[0] != M:
            if cloud.provenance is None:
                raise fb.utility.FBParamError(
                        'Per-frame viewpoints require a cloud with provenance.')
            viewpoints = viewpoints[cloud.provenance[:,0]]
        ref = viewpoints - pts
    else:
        ref = pts - pts.mean(axis=0)
    flip = np.einsum('mi,mi->m', normals, ref) < 0
    normals[flip] *= -1.
    return PointCloud(pts, normals=normals, provenance=cloud.provenance,
            normal_valid=valid)


def fit_plane(points):
    """Total least-squares plane through a set of points
    plane = fit_plane(points)

The plane passes through the centroid with its normal along the
direction of least variance.  The sign is chosen so that the normal's
largest component is positive.  Raises FBAnalysisError for fewer than 3
points or collinear points.
"""
    points = np.asarray(points, dtype=float).reshape(-1,3)
    if points.shape[0] < 3:
        raise fb.utility.FBAnalysisError(
                'A plane fit needs at least 3 points; found %d.'%points.shape[0])
    c = points.mean(axis=0)
    _,s,Vt = np.linalg.svd(points - c, full_matrices=False)
    if not s[1] > 1e-9 * max(s[0], 1e-300):
        raise fb.utility.FBAnalysisError('Cannot fit a plane to collinear points.')
    n = Vt[2]
    if n[np.argmax(np.abs(n))] < 0:
        n = -n
    return Plane(n, -np.dot(n, c))


def point_plane_distance(p, plane):
    """Unsigned distance from point(s) to a plane
    d = point_plane_distance(p, plane)
"""
    return plane.distance(p)


def segment_distance_2d(p, a, b):
    """Distance from 2D points to 2D segments
    d = segment_distance_2d(p, a, b)

p is (M,2) and a, b are (S,2) segment endpoints.  Returns the (M,S)
matrix of exact point-to-segment distances.
"""
    p = np.asarray(p, dtype=float).reshape(-1,2)
    a = np.asarray(a, dtype=float).reshape(-1,2)
    b = np.asarray(b, dtype=float).reshape(-1,2)
    ab = b - a
    L2 = np.einsum('si,si->s', ab, ab)
    ap = p[:,np.newaxis,:] - a[np.newaxis,:,:]
    s = np.clip(np.einsum('msi,si->ms', ap, ab) / L2, 0., 1.)
    diff = ap - s[:,:,np.newaxis] * ab[np.newaxis,:,:]
    return np.sqrt(np.einsum('msi,msi->ms', diff, diff))
