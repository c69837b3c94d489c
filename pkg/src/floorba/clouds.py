"""floorba semantic clouds

The full scan P, the floor cloud P_F, and the walls cloud P_W are built
by backprojecting the pixels of every frame on a stride lattice and
mapping them into the world with the frame's pose.  Floor and wall
points are selected by their labels ('label_floor' and 'label_wall' in
the configuration).

Every point keeps its provenance (frame index, pixel row, pixel column)
and its camera-frame coordinates, so moving the poses moves the clouds
without touching the depth grids again.
"""

import numpy as np
import floorba as fb


class SemanticClouds:
    """The full, floor, and walls clouds of a scan
    sc = SemanticClouds(full, floor, walls, camera, stride)

full, floor, walls  geometry.PointCloud objects with provenance whose
                    first column is the position of the frame in the
                    frame list
camera              dictionary of (M,3) camera-frame coordinates keyed
                    by 'full', 'floor', and 'walls'
stride              the pixel stride used to build them
"""
    names = ('full', 'floor', 'walls')

    def __init__(self, full, floor, walls, camera, stride):
        self.full = full
        self.floor = floor
        self.walls = walls
        self.camera = camera
        self.stride = stride

    def __repr__(self):
        return 'SemanticClouds(full=%d, floor=%d, walls=%d)'%(
                len(self.full), len(self.floor), len(self.walls))

    def cloud(self, name):
        return getattr(self, name)

    def frame_index(self, name):
        """(M,) frame position of every point of a cloud"""
        return self.cloud(name).provenance[:,0]


def _split(points, cam, prov, mask):
    return fb.geometry.PointCloud(points[mask], provenance=prov[mask]), cam[mask]


def build_semantic_clouds(frames, poses, stride=None):
    """Backproject labeled pixels into the world
    sc = build_semantic_clouds(frames, poses, stride=None)

frames is the list of dat.Frame objects and poses a geometry.PoseArray
with one pose per frame.  Only every stride-th row and column is
visited; stride defaults to the configured 'stride'.  Pixels without
depth are skipped.  Frames with no valid pixels contribute nothing.
"""
    if stride is None:
        stride = fb.config['stride']
    stride = int(stride)
    if stride < 1:
        raise fb.utility.FBParamError('stride must be a positive integer: %r'%stride)
    if len(poses) != len(frames):
        raise fb.utility.FBDataError('Found %d poses for %d frames.'%(len(poses), len(frames)))

    label_floor = fb.config['label_floor']
    label_wall = fb.config['label_wall']
    cam = []
    prov = []
    labels = []
    for kk,frame in enumerate(frames):
        p,rows,cols = fb.geometry.backproject_grid(frame.depth, frame.intrinsics, stride)
        cam.append(p)
        prov.append(np.stack((np.full(rows.shape, kk), rows, cols), axis=1))
        labels.append(frame.labels[rows, cols])
    if cam:
        cam = np.concatenate(cam, axis=0)
        prov = np.concatenate(prov, axis=0).astype(np.int64)
        labels = np.concatenate(labels)
    else:
        cam = np.zeros((0,3))
        prov = np.zeros((0,3), dtype=np.int64)
        labels = np.zeros(0, dtype=int)

    world = poses.apply(prov[:,0], cam)
    full = fb.geometry.PointCloud(world, provenance=prov)
    floor,cam_floor = _split(world, cam, prov, labels == label_floor)
    walls,cam_walls = _split(world, cam, prov, labels == label_wall)
    return SemanticClouds(full, floor, walls,
            {'full':cam, 'floor':cam_floor, 'walls':cam_walls}, stride)


def repose_clouds(clouds, frames, new_poses):
    """Move the clouds to a new set of poses
    new = repose_clouds(clouds, frames, new_poses)

The result is identical to build_semantic_clouds(frames, new_poses,
clouds.stride).  Camera-frame coordinates are taken from the cache when
it is present and otherwise recovered from the depth grids through the
provenance.  Raises FBDataError when provenance is missing.
"""
    if len(new_poses) != len(frames):
        raise fb.utility.FBDataError('Found %d poses for %d frames.'%(len(new_poses), len(frames)))
    out = {}
    camera = {}
    for name in SemanticClouds.names:
        cloud = clouds.cloud(name)
        if cloud.provenance is None:
            raise fb.utility.FBDataError('The %s cloud carries no provenance.'%name)
        prov = cloud.provenance
        cam = None if clouds.camera is None else clouds.camera.get(name)
        if cam is None:
            cam = np.zeros((len(cloud),3))
            for kk,frame in enumerate(frames):
                I = np.nonzero(prov[:,0] == kk)[0]
                if I.size == 0:
                    continue
                rows = prov[I,1]
                cols = prov[I,2]
                z = frame.depth[rows, cols].astype(float) * frame.intrinsics.depth_scale
                cam[I] = frame.intrinsics.backproject(cols, rows, z)
        camera[name] = cam
        out[name] = fb.geometry.PointCloud(new_poses.apply(prov[:,0], cam), provenance=prov)
    return SemanticClouds(out['full'], out['floor'], out['walls'], camera, clouds.stride)


def build_cloud(frames, poses, stride=None):
    """The full scan P only
    cloud = build_cloud(frames, poses, stride=None)
"""
    return build_semantic_clouds(frames, poses, stride).full


def transform_clouds(clouds, R, t=(0.,0.,0.)):
    """Apply a world-frame rigid motion to all three clouds

Camera-frame coordinates do not change.
"""
    return SemanticClouds(clouds.full.transformed(R, t),
            clouds.floor.transformed(R, t),
            clouds.walls.transformed(R, t),
            clouds.camera, clouds.stride)
