"""floorba synthetic scenes

A floorplan is extruded into a closed set of rooms with a floor at
y = 0 and a ceiling at y = SceneSpec.ceiling.  Cameras walk through the
rooms, and each frame's depth and labels are rendered by casting one ray
per pixel against the floor, the ceiling, the walls, and the furniture
boxes.  Floor pixels get the 'label_floor' class, wall pixels the
'label_wall' class, and everything else 0.

Landmarks are random points on the walls and the floor.  A landmark is
visible in a frame when it projects into the image and nothing lies
between it and the camera.  synth_matches() pairs the observations of
each landmark in nearby frames.

Everything is drawn from numpy Generators seeded by SceneSpec.seed, so
two runs with the same inputs produce identical scenes.
"""

import os
import numpy as np
from scipy.spatial.transform import Rotation
import floorba as fb


class SceneSpec:
    """Parameters of a synthetic scene
    spec = SceneSpec(**kwarg)

frames          number of frames on the trajectory (24)
width, height   image size in pixels (160, 120)
hfov_deg        horizontal field of view (70)
ceiling         ceiling height in meters (2.5)
camera_height   camera height in meters (1.4)
pitch_deg       camera tilt; negative looks down (-15)
waypoints       (K,2) floorplan (u, v) points the cameras walk through;
                by default a line through the middle of the floorplan
turns           full turns of the camera heading along the walk (2)
boxes           list of (min corner, max corner) furniture boxes
landmark_density  landmarks per square meter of wall and floor (1)
depth_noise     standard deviation of Gaussian depth noise in meters (0)
quantize        store depth as uint16 with depth_scale (True); otherwise
                as float meters with depth_scale 1
depth_scale     meters per depth unit (0.001)
seed            random seed (configured 'seed')
"""
    _defaults = {'frames':24, 'width':160, 'height':120, 'hfov_deg':70.,
            'ceiling':2.5, 'camera_height':1.4, 'pitch_deg':-15.,
            'waypoints':None, 'turns':2., 'boxes':(), 'landmark_density':1.,
            'depth_noise':0., 'quantize':True, 'depth_scale':0.001, 'seed':None}

    def __init__(self, **kwarg):
        for key in kwarg:
            if key not in self._defaults:
                raise fb.utility.FBParamError('Unrecognized scene parameter: %r'%key)
        for key,value in self._defaults.items():
            setattr(self, key, kwarg.get(key, value))
        if self.seed is None:
            self.seed = fb.config['seed']
        self.frames = int(self.frames)
        self.width = int(self.width)
        self.height = int(self.height)
        if self.frames < 1 or self.width < 2 or self.height < 2:
            raise fb.utility.FBParamError('A scene needs at least one frame of 2x2 pixels.')
        if not 0 < self.camera_height < self.ceiling:
            raise fb.utility.FBParamError('The camera must be between the floor and the ceiling.')
        self.boxes = [(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
                for lo,hi in self.boxes]

    def __repr__(self):
        return 'SceneSpec(frames=%d, %dx%d, seed=%r)'%(self.frames, self.width,
                self.height, self.seed)

    def intrinsics(self):
        """Pinhole intrinsics with the principal point at the image center"""
        f = 0.5*self.width / np.tan(0.5*np.radians(self.hfov_deg))
        scale = self.depth_scale if self.quantize else 1.
        return fb.geometry.CameraIntrinsics(f, f, 0.5*self.width, 0.5*self.height, scale)


class SyntheticScene:
    """A generated scene and its ground truth
    scene = SyntheticScene(floorplan, spec, trajectory, landmarks, visibility)

floorplan   Floorplan2D that generated the walls
spec        SceneSpec
trajectory  ground-truth PoseArray, one pose per frame
landmarks   (L,3) world points
visibility  (N,L) boolean, True where landmark l is visible in frame n
"""
    def __init__(self, floorplan, spec, trajectory, landmarks, visibility):
        self.floorplan = floorplan
        self.spec = spec
        self.trajectory = trajectory
        self.landmarks = np.asarray(landmarks, dtype=float).reshape(-1,3)
        self.visibility = np.asarray(visibility, dtype=bool)

    def __repr__(self):
        return 'SyntheticScene(<%d frames, %d landmarks>)'%(len(self.trajectory),
                len(self.landmarks))

    @property
    def ceiling(self):
        return self.spec.ceiling

    @property
    def boxes(self):
        return self.spec.boxes


def three_room_floorplan():
    """A 9 m x 4 m floor split into three rooms by two walls with doors"""
    return fb.floorplan.Floorplan2D([
            (0., 0., 9., 0.),
            (9., 0., 9., 4.),
            (9., 4., 0., 4.),
            (0., 4., 0., 0.),
            (3., 0., 3., 1.5),
            (3., 2.5, 3., 4.),
            (6., 0., 6., 1.5),
            (6., 2.5, 6., 4.)])


def camera_rotation(heading, pitch):
    """Camera to world rotation for a heading about y and a pitch about the camera x axis

With heading 0 the camera looks along +z.  Negative pitch looks down.
"""
    # Camera x right, y down, z forward
    R0 = np.diag([-1., -1., 1.])
    c = np.cos(pitch)
    s = np.sin(pitch)
    Rx = np.array([[1., 0., 0.], [0., c, -s], [0., s, c]])
    return fb.geometry.rot_y(heading) @ R0 @ Rx


def default_trajectory(fp, spec):
    """Cameras walking along spec.waypoints while turning"""
    if spec.waypoints is None:
        (u0,v0),(u1,v1) = fp.bounds()
        vm = 0.5*(v0 + v1)
        wp = np.array([[u0 + (u1-u0)/6., vm], [u1 - (u1-u0)/6., vm]])
    else:
        wp = np.asarray(spec.waypoints, dtype=float).reshape(-1,2)
    if wp.shape[0] == 1:
        path = np.repeat(wp, spec.frames, axis=0)
    else:
        step = np.linalg.norm(np.diff(wp, axis=0), axis=1)
        s = np.concatenate(([0.], np.cumsum(step)))
        target = np.linspace(0., s[-1], spec.frames)
        path = np.stack((np.interp(target, s, wp[:,0]), np.interp(target, s, wp[:,1])), axis=1)
    frac = np.arange(spec.frames) / max(spec.frames, 1)
    heading = 2*np.pi*spec.turns*frac
    pitch = np.radians(spec.pitch_deg)
    R = np.array([camera_rotation(h, pitch) for h in heading])
    t = np.stack((path[:,0], np.full(spec.frames, spec.camera_height), path[:,1]), axis=1)
    return fb.geometry.PoseArray.from_matrices(R, t)




####################################
# Ray casting
####################################
def cast_rays(origin, directions, fp, spec):
    """First surface hit by each ray
    lam, surface = cast_rays(origin, directions, fp, spec)

origin is a 3-vector and directions is (M,3).  lam is the ray
parameter of the hit, so that the hit point is origin + lam*direction,
and inf where nothing is hit.  surface holds 0 for none, 1 for the floor,
2 for a wall, 3 for the ceiling, and 4 for a box.
"""
    o = np.asarray(origin, dtype=float)
    d = np.asarray(directions, dtype=float).reshape(-1,3)
    M = d.shape[0]
    lam = np.full(M, np.inf)
    surface = np.zeros(M, dtype=np.int64)
    tiny = 1e-12

    def offer(candidate, kind):
        better = candidate < lam
        lam[better] = candidate[better]
        surface[better] = kind

    with np.errstate(divide='ignore', invalid='ignore'):
        # Floor and ceiling
        down = d[:,1] < -tiny
        offer(np.where(down, -o[1] / d[:,1], np.inf), 1)
        up = d[:,1] > tiny
        offer(np.where(up, (spec.ceiling - o[1]) / d[:,1], np.inf), 3)

        # Walls, as vertical rectangles over the segments
        a = fp.a
        e = fp.b - a
        dx = d[:,[0]]
        dz = d[:,[2]]
        denom = dx*e[:,1] - dz*e[:,0]
        ao = a - o[[0,2]]
        lw = (ao[:,0]*e[:,1] - ao[:,1]*e[:,0]) / denom
        sw = (ao[:,0]*dz - ao[:,1]*dx) / denom
        y = o[1] + lw*d[:,[1]]
        ok = (np.abs(denom) > tiny) & (lw > tiny) & (sw >= 0.) & (sw <= 1.) & \
                (y >= 0.) & (y <= spec.ceiling)
        offer(np.where(ok, lw, np.inf).min(axis=1) if len(fp) else np.full(M, np.inf), 2)

        # Boxes, by the slab method
        for lo,hi in spec.boxes:
            t1 = (lo - o) / d
            t2 = (hi - o) / d
            near = np.nanmax(np.minimum(t1, t2), axis=1)
            far = np.nanmin(np.maximum(t1, t2), axis=1)
            hit = (far >= near) & (near > tiny)
            offer(np.where(hit, near, np.inf), 4)
    return lam, surface


def render_frame(pose, intr, fp, spec, rng=None):
    """Depth (meters) and labels of one frame
    depth, labels = render_frame(pose, intr, fp, spec)
"""
    u,v = np.meshgrid(np.arange(spec.width, dtype=float),
            np.arange(spec.height, dtype=float), indexing='xy')
    cam = np.stack(((u.ravel() - intr.cx) / intr.fx,
            (v.ravel() - intr.cy) / intr.fy, np.ones(u.size)), axis=1)
    # The third camera coordinate of the direction is 1, so lam is the depth
    lam,surface = cast_rays(pose.translation, cam @ pose.matrix().T, fp, spec)
    depth = np.where(np.isfinite(lam), lam, 0.)
    if spec.depth_noise > 0 and rng is not None:
        depth = np.where(depth > 0, depth + rng.normal(0., spec.depth_noise, depth.shape), 0.)
        depth = np.maximum(depth, 0.)
    labels = np.zeros(surface.shape, dtype=np.uint8)
    labels[surface == 1] = fb.config['label_floor']
    labels[surface == 2] = fb.config['label_wall']
    return depth.reshape(spec.height, spec.width), labels.reshape(spec.height, spec.width)


def _check_free_space(fp, spec, trajectory, clearance=0.2):
    (u0,v0),(u1,v1) = fp.bounds()
    c = trajectory.centers()
    inside = (c[:,0] > u0) & (c[:,0] < u1) & (c[:,2] > v0) & (c[:,2] < v1) & \
            (c[:,1] > 0.) & (c[:,1] < spec.ceiling)
    clear = fb.floorplan.nearest_segment_distance(c[:,[0,2]], fp) > clearance
    for lo,hi in spec.boxes:
        clear &= ~np.all((c >= lo) & (c <= hi), axis=1)
    bad = np.nonzero(~(inside & clear))[0]
    if bad.size:
        fb.utility.print_error('Camera %d is outside the free space of the floorplan.'%bad[0])
        raise fb.utility.FBParamError('%d trajectory pose(s) outside the free space.'%bad.size)


def _landmarks(fp, spec, rng):
    L = fp.lengths()
    area = L.sum() * spec.ceiling
    nwall = int(np.ceil(area * spec.landmark_density))
    seg = rng.choice(len(fp), size=nwall, p=L/L.sum())
    s = rng.uniform(0.05, 0.95, nwall)
    uv = fp.a[seg] + s[:,np.newaxis]*(fp.b[seg] - fp.a[seg])
    y = rng.uniform(0.1*spec.ceiling, 0.9*spec.ceiling, nwall)
    walls = np.stack((uv[:,0], y, uv[:,1]), axis=1)
    (u0,v0),(u1,v1) = fp.bounds()
    nfloor = int(np.ceil((u1-u0)*(v1-v0)*spec.landmark_density))
    floor = np.stack((rng.uniform(u0, u1, nfloor), np.zeros(nfloor),
            rng.uniform(v0, v1, nfloor)), axis=1)
    return np.concatenate((walls, floor), axis=0)


def landmark_visibility(landmarks, poses, intr, fp, spec, margin=2.):
    """(N,L) visibility of landmarks in every frame

A landmark is visible when it lies in front of the camera, projects at
least margin pixels inside the image, and is the first surface on its
ray.
"""
    N = len(poses)
    vis = np.zeros((N, landmarks.shape[0]), dtype=bool)
    R = poses.matrices()
    for kk in range(N):
        cam = (landmarks - poses.translations[kk]) @ R[kk]
        front = cam[:,2] > 1e-6
        uv = np.stack(intr.project(cam), axis=-1)
        inside = front & (uv[:,0] >= margin) & (uv[:,0] <= spec.width-1-margin) & \
                (uv[:,1] >= margin) & (uv[:,1] <= spec.height-1-margin)
        I = np.nonzero(inside)[0]
        if I.size == 0:
            continue
        direction = cam[I] / cam[I,2:3]
        lam,_ = cast_rays(poses.translations[kk], direction @ R[kk].T, fp, spec)
        vis[kk,I] = lam >= cam[I,2] - 1e-6
    return vis


def generate_scene(fp, spec=None, trajectory=None):
    """Render a synthetic RGB-D sequence
    scene, frames = generate_scene(fp, spec=None, trajectory=None)

fp is a Floorplan2D in meters and spec a SceneSpec.  trajectory is an
optional ground-truth PoseArray; by default the cameras follow
default_trajectory().  The frames' initial poses are the ground truth.

Raises FBParamError when a camera is outside the free space of the
floorplan: outside its bounds, closer than 0.2 m to a wall, or inside a
box.
"""
    if spec is None:
        spec = SceneSpec()
    if trajectory is None:
        trajectory = default_trajectory(fp, spec)
    _check_free_space(fp, spec, trajectory)
    intr = spec.intrinsics()

    frames = []
    for kk,pose in enumerate(trajectory):
        rng = np.random.default_rng([spec.seed, kk])
        depth,labels = render_frame(pose, intr, fp, spec, rng)
        if spec.quantize:
            depth = np.clip(np.round(depth / spec.depth_scale), 0, 65535).astype(np.uint16)
        frames.append(fb.dat.Frame(kk, depth, labels, intr, pose))

    rng = np.random.default_rng(spec.seed)
    landmarks = _landmarks(fp, spec, rng)
    vis = landmark_visibility(landmarks, trajectory, intr, fp, spec)
    keep = vis.sum(axis=0) >= 2
    scene = SyntheticScene(fp, spec, trajectory, landmarks[keep], vis[:,keep])
    return scene, frames


def perturb_poses(trajectory, sigma_rot_deg=0., sigma_trans=0., seed=None):
    """Add accumulated random-walk drift to a trajectory
    poses = perturb_poses(trajectory, sigma_rot_deg, sigma_trans, seed)

At every step after the first, a random rotation (rotation vector
components with standard deviation sigma_rot_deg) and a random
translation (sigma_trans meters per axis) are added to the drift.  The
drift rotates the trajectory about the first camera center, so the
first pose is unchanged.
"""
    if seed is None:
        seed = fb.config['seed']
    N = len(trajectory)
    if N == 0 or (sigma_rot_deg == 0 and sigma_trans == 0):
        return trajectory.copy()
    rng = np.random.default_rng(seed)
    steps_r = rng.normal(0., np.radians(sigma_rot_deg), (N,3))
    steps_t = rng.normal(0., sigma_trans, (N,3))
    steps_r[0] = 0.
    steps_t[0] = 0.
    c0 = trajectory.translations[0]
    drift = Rotation.identity()
    offset = np.zeros(3)
    quats = trajectory.quats.copy()
    trans = trajectory.translations.copy()
    for kk in range(1, N):
        drift = Rotation.from_rotvec(steps_r[kk]) * drift
        offset = offset + steps_t[kk]
        quats[kk] = (drift * Rotation.from_quat(trajectory.quats[kk])).as_quat()
        trans[kk] = drift.apply(trajectory.translations[kk] - c0) + c0 + offset
    return fb.geometry.PoseArray(quats, trans)


def synth_matches(scene, frames, pixel_noise=0., mismatch=0., max_gap=3,
        exact_depth=True, seed=None):
    """Keypoint matches from the landmarks of a scene
    matches = synth_matches(scene, frames, pixel_noise=0., mismatch=0.)

Every landmark visible in two frames at most max_gap apart gives one
match between them.  Observations are the ground-truth projections plus
Gaussian pixel noise, kept inside the image.  With exact_depth, the
matches carry the landmarks' camera depths, so that zero noise gives
point pairs that coincide under the ground-truth poses.

A fraction 'mismatch' of the matches is then corrupted: the keypoint in
the second frame is replaced by a random pixel with depth.  The number
of corrupted matches is stored in the returned MatchList's 'mismatched'
attribute.
"""
    if seed is None:
        seed = scene.spec.seed
    rng = np.random.default_rng([seed, 1])
    poses = scene.trajectory
    R = poses.matrices()
    vis = scene.visibility
    W = scene.spec.width
    H = scene.spec.height

    def observe(kk, L):
        intr = frames[kk].intrinsics
        cam = (scene.landmarks[L] - poses.translations[kk]) @ R[kk]
        uv = np.stack(intr.project(cam), axis=-1)
        if pixel_noise > 0:
            uv = uv + rng.normal(0., pixel_noise, uv.shape)
        uv[:,0] = np.clip(uv[:,0], 0., W-1)
        uv[:,1] = np.clip(uv[:,1], 0., H-1)
        return uv, cam[:,2]

    out = fb.dat.MatchList()
    N = len(frames)
    for a in range(N):
        for b in range(a+1, min(a+max_gap, N-1)+1):
            L = np.nonzero(vis[a] & vis[b])[0]
            if L.size == 0:
                continue
            uva,za = observe(a, L)
            uvb,zb = observe(b, L)
            for ll in range(L.size):
                out.append(fb.dat.KeypointMatch(frames[a].index, uva[ll,0], uva[ll,1],
                        frames[b].index, uvb[ll,0], uvb[ll,1],
                        za[ll] if exact_depth else None, zb[ll] if exact_depth else None))

    out.mismatched = 0
    count = int(round(mismatch * len(out)))
    if count > 0:
        position = {f.index:kk for kk,f in enumerate(frames)}
        for ii in rng.choice(len(out), size=count, replace=False):
            m = out[ii]
            frame = frames[position[m.frame_b]]
            valid = np.argwhere(frame.depth > 0)
            row,col = valid[rng.integers(valid.shape[0])]
            out[ii] = fb.dat.KeypointMatch(m.frame_a, m.ua, m.va, m.frame_b,
                    float(col), float(row), m.za,
                    frame.depth_at(row, col) if exact_depth else None)
        out.mismatched = count
    return out


def write_scene(scene, frames, directory, poses=None, matches=None):
    """Write a scene in the layout read by dat.load_sequence()
    write_scene(scene, frames, directory, poses=None, matches=None)

The directory receives manifest.txt, the depth and label grids,
trajectory.txt (poses, or the frames' initial poses), groundtruth.txt,
floorplan.txt, and matches.txt when matches are given.
"""
    fb.dat.write_sequence(directory, frames, poses)
    index = [f.index for f in frames]
    fb.dat.write_trajectory(os.path.join(directory, 'groundtruth.txt'),
            scene.trajectory, index)
    fb.dat.write_floorplan(scene.floorplan, os.path.join(directory, 'floorplan.txt'))
    if matches is not None:
        fb.dat.write_matches(os.path.join(directory, 'matches.txt'), matches)
