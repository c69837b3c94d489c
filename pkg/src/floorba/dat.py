"""FLOORBA.DAT

Responsible for all file operations.  Every reader has a matching
writer so that data written by floorba can be read back without loss.
The formats are documented in FORMATS.md at the root of the
distribution.

    parse_floorplan()   write_floorplan()     floorplan text
    load_trajectory()   write_trajectory()    one pose per line
    load_sequence()     write_sequence()      manifest + depth/label grids
    load_matches()      write_matches()       keypoint matches
    import_cloud()      export_cloud()        binary point clouds
    load_report()       write_report()        key: value reports

Parsers raise FBFileError with the file name and line number when a
record is malformed.
"""

import os
import struct
import numpy as np
# load the root of the module
import floorba as fb
utility = fb.utility






######################################
##
##  Frame and match types
##
######################################
class Frame:
    """One RGB-D frame
    frame = Frame(index, depth, labels, intrinsics, initial_pose)

depth       2D grid of raw depth values (uint16, or float meters when
            intrinsics.depth_scale is 1)
labels      2D grid of class ids with the same shape
intrinsics  geometry.CameraIntrinsics
initial_pose geometry.Pose (camera to world)
"""
    def __init__(self, index, depth, labels, intrinsics, initial_pose=None):
        self.index = int(index)
        self.depth = np.asarray(depth)
        self.labels = np.asarray(labels)
        if self.depth.ndim != 2:
            raise utility.FBDataError('Frame %d: depth must be a 2D grid.'%self.index)
        if self.depth.shape != self.labels.shape:
            raise utility.FBDataError(
                    'Frame %d: depth shape %r does not match label shape %r.'%(
                    self.index, self.depth.shape, self.labels.shape))
        self.intrinsics = intrinsics
        if initial_pose is None:
            initial_pose = fb.geometry.Pose()
        self.initial_pose = initial_pose

    def __repr__(self):
        return 'Frame(%d, <%dx%d>)'%(self.index, self.depth.shape[1], self.depth.shape[0])

    @property
    def height(self):
        return self.depth.shape[0]

    @property
    def width(self):
        return self.depth.shape[1]

    def depth_at(self, row, col):
        """Metric depth at a pixel; zero when the pixel has no depth"""
        z = float(self.depth[row, col])
        if not (np.isfinite(z) and z > 0):
            return 0.
        return z * self.intrinsics.depth_scale


class KeypointMatch:
    """A keypoint observed in two frames
    m = KeypointMatch(frame_a, ua, va, frame_b, ub, vb, za=None, zb=None)

(u, v) are sub-pixel (column, row) coordinates.  za and zb are optional
metric depths that override the depth grids.
"""
    def __init__(self, frame_a, ua, va, frame_b, ub, vb, za=None, zb=None):
        self.frame_a = int(frame_a)
        self.frame_b = int(frame_b)
        if self.frame_a == self.frame_b:
            raise utility.FBParamError('A match must join two different frames: %d'%self.frame_a)
        self.ua = float(ua)
        self.va = float(va)
        self.ub = float(ub)
        self.vb = float(vb)
        self.za = None if za is None else float(za)
        self.zb = None if zb is None else float(zb)

    def __repr__(self):
        return 'KeypointMatch(%d, %r, %r, %d, %r, %r)'%(self.frame_a,
                self.ua, self.va, self.frame_b, self.ub, self.vb)


class MatchList(list):
    """A list of KeypointMatch objects

The 'dropped' attribute counts the records that were discarded while
loading because their coordinates fell outside the image.
"""
    def __init__(self, matches=(), dropped=0):
        list.__init__(self, matches)
        self.dropped = dropped






#############################
##
##  Helpers
##
#############################
def _records(path):
    """Yield (line number, tokens) for every non-blank, non-comment line"""
    if not os.path.isfile(path):
        utility.print_error('File not found: ' + repr(path))
        raise utility.FBFileError('File not found: ' + repr(path))
    with open(path, 'r') as ff:
        for lineno,line in enumerate(ff, start=1):
            line = line.split('#',1)[0].strip()
            if line:
                yield lineno, line.split()


def _floats(path, lineno, tokens):
    try:
        return [float(tt) for tt in tokens]
    except ValueError:
        raise utility.FBFileError('%s:%d: expected numbers, found %r'%(
                path, lineno, ' '.join(tokens)))


def _int(path, lineno, token):
    try:
        return int(token)
    except ValueError:
        raise utility.FBFileError('%s:%d: expected an integer, found %r'%(
                path, lineno, token))


def _fmt(x):
    return '%.17g'%x


def _open_write(path):
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        return open(path, 'w')
    except OSError as err:
        utility.print_error('Could not write to ' + repr(path))
        raise utility.FBFileError(str(err))






#############################
##
##  Floorplans
##
#############################
def parse_floorplan(path):
    """Read a floorplan text file
    fp = parse_floorplan(path)

The file holds an optional header and one segment per line,
    units_per_meter 100
    segment 0 0 500 0
    segment 500 0 500 400
The header may instead name a length unit known to units.length,
    units cm
Coordinates are divided by units_per_meter so the floorplan is returned
in meters.
"""
    upm = 1.
    rows = []
    lines = []
    for lineno,tokens in _records(path):
        key = tokens[0].lower()
        if key == 'units_per_meter':
            if len(tokens) != 2:
                raise utility.FBFileError('%s:%d: expected "units_per_meter N"'%(path, lineno))
            upm, = _floats(path, lineno, tokens[1:])
            if not upm > 0:
                raise utility.FBFileError('%s:%d: units_per_meter must be positive'%(path, lineno))
        elif key == 'units':
            if len(tokens) != 2 or tokens[1] not in fb.units.length:
                raise utility.FBFileError('%s:%d: unrecognized units %r'%(
                        path, lineno, ' '.join(tokens[1:])))
            upm = 1. / fb.units.length(1., tokens[1], 'm')
        elif key == 'segment':
            if len(tokens) != 5:
                raise utility.FBFileError('%s:%d: a segment needs 4 coordinates'%(path, lineno))
            rows.append(_floats(path, lineno, tokens[1:]))
            lines.append(lineno)
        else:
            raise utility.FBFileError('%s:%d: unrecognized record %r'%(path, lineno, tokens[0]))

    if not rows:
        utility.print_error('The floorplan file defines no segments: ' + repr(path))
        raise utility.FBFileError('%s: empty floorplan'%path)
    rows = np.array(rows) / upm
    for seg,lineno in zip(rows, lines):
        if not np.hypot(seg[2]-seg[0], seg[3]-seg[1]) > 1e-6:
            raise utility.FBFileError('%s:%d: segment %s has zero length'%(
                    path, lineno, ' '.join(_fmt(x*upm) for x in seg)))
    return fb.floorplan.Floorplan2D(rows, units_per_meter=upm)


def write_floorplan(fp, path):
    """Write a floorplan in its source units
    write_floorplan(fp, path)
"""
    with _open_write(path) as ff:
        ff.write('units_per_meter %s\n'%_fmt(fp.units_per_meter))
        for seg in fp.segments:
            if fp.units_per_meter != 1.:
                seg = seg * fp.units_per_meter
            ff.write('segment ' + ' '.join(_fmt(x) for x in seg) + '\n')






#############################
##
##  Trajectories
##
#############################
def load_trajectory(path):
    """Read a trajectory file
    index, poses = load_trajectory(path)

Each line reads "index tx ty tz qx qy qz qw".  Returns the integer
frame indices and a geometry.PoseArray in file order.
"""
    index = []
    quats = []
    trans = []
    for lineno,tokens in _records(path):
        if len(tokens) != 8:
            raise utility.FBFileError('%s:%d: a pose line needs 8 fields, found %d'%(
                    path, lineno, len(tokens)))
        ii = _int(path, lineno, tokens[0])
        values = _floats(path, lineno, tokens[1:])
        q = np.array(values[3:])
        if not np.all(np.isfinite(values)) or not np.linalg.norm(q) > 0:
            raise utility.FBFileError('%s:%d: invalid pose'%(path, lineno))
        index.append(ii)
        trans.append(values[:3])
        quats.append(q)
    if len(set(index)) != len(index):
        raise utility.FBFileError('%s: repeated frame index'%path)
    if not index:
        return np.zeros(0, dtype=np.int64), fb.geometry.PoseArray(np.zeros((0,4)), np.zeros((0,3)))
    return np.array(index, dtype=np.int64), fb.geometry.PoseArray(quats, trans)


def write_trajectory(path, poses, index=None):
    """Write a trajectory file
    write_trajectory(path, poses, index=None)

poses is a geometry.PoseArray.  index defaults to 0..N-1.
"""
    if index is None:
        index = range(len(poses))
    with _open_write(path) as ff:
        for ii,q,t in zip(index, poses.quats, poses.translations):
            ff.write('%d '%ii + ' '.join(_fmt(x) for x in np.concatenate((t,q))) + '\n')






#############################
##
##  Sequences
##
#############################
def _load_grid(path, what):
    if not os.path.isfile(path):
        utility.print_error('Missing %s grid: %r'%(what, path))
        raise utility.FBFileError('Missing %s grid: %r'%(what, path))
    try:
        grid = np.load(path, allow_pickle=False)
    except ValueError as err:
        raise utility.FBFileError('%s: %s'%(path, err))
    if grid.ndim != 2:
        raise utility.FBFileError('%s: expected a 2D grid, found shape %r'%(path, grid.shape))
    return grid


def load_sequence(directory, manifest='manifest.txt'):
    """Load a posed RGB-D sequence
    frames = load_sequence(directory, manifest='manifest.txt')

The manifest lives in the directory and reads
    intrinsics fx fy cx cy depth_scale
    trajectory trajectory.txt
    0 depth/000000.npy labels/000000.npy
    1 depth/000001.npy labels/000001.npy
    ...
Paths are relative to the directory.  The trajectory must hold exactly
one pose for every listed frame.  Frames are returned sorted by index.
"""
    mpath = os.path.join(directory, manifest)
    intr = None
    trajectory = None
    entries = []
    for lineno,tokens in _records(mpath):
        key = tokens[0].lower()
        if key == 'intrinsics':
            if len(tokens) != 6:
                raise utility.FBFileError('%s:%d: expected "intrinsics fx fy cx cy depth_scale"'%(
                        mpath, lineno))
            try:
                intr = fb.geometry.CameraIntrinsics(*_floats(mpath, lineno, tokens[1:]))
            except utility.FBParamError as err:
                raise utility.FBFileError('%s:%d: %s'%(mpath, lineno, err))
        elif key == 'trajectory':
            if len(tokens) != 2:
                raise utility.FBFileError('%s:%d: expected "trajectory PATH"'%(mpath, lineno))
            trajectory = tokens[1]
        else:
            if len(tokens) != 3:
                raise utility.FBFileError('%s:%d: expected "index depth_path label_path"'%(
                        mpath, lineno))
            entries.append((_int(mpath, lineno, tokens[0]), tokens[1], tokens[2]))

    if intr is None:
        raise utility.FBFileError('%s: no intrinsics record'%mpath)
    if trajectory is None:
        raise utility.FBFileError('%s: no trajectory record'%mpath)
    if len(set(e[0] for e in entries)) != len(entries):
        raise utility.FBFileError('%s: repeated frame index'%mpath)

    index,poses = load_trajectory(os.path.join(directory, trajectory))
    if len(index) != len(entries):
        utility.print_error('The trajectory holds %d poses for %d frames.'%(len(index), len(entries)))
        raise utility.FBFileError('%s: count mismatch, %d poses for %d frames'%(
                trajectory, len(index), len(entries)))
    lookup = {ii:kk for kk,ii in enumerate(index)}

    frames = []
    for ii,dpath,lpath in sorted(entries):
        if ii not in lookup:
            raise utility.FBFileError('%s: no pose for frame %d'%(trajectory, ii))
        depth = _load_grid(os.path.join(directory, dpath), 'depth')
        labels = _load_grid(os.path.join(directory, lpath), 'label')
        frames.append(Frame(ii, depth, labels, intr, poses[lookup[ii]]))
    return frames


def initial_poses(frames):
    """The initial poses of a frame list as a PoseArray"""
    return fb.geometry.PoseArray.from_poses([f.initial_pose for f in frames])


def write_sequence(directory, frames, poses=None, manifest='manifest.txt',
        trajectory='trajectory.txt'):
    """Write a sequence in the layout read by load_sequence()
    write_sequence(directory, frames, poses=None)

All frames must share the same intrinsics.  When poses is None, the
frames' initial poses are written.
"""
    if not frames:
        raise utility.FBDataError('Cannot write an empty sequence.')
    intr = frames[0].intrinsics
    for ff in frames:
        if not ff.intrinsics == intr:
            raise utility.FBDataError('Frames of one sequence must share intrinsics.')
    if poses is None:
        poses = initial_poses(frames)
    os.makedirs(os.path.join(directory, 'depth'), exist_ok=True)
    os.makedirs(os.path.join(directory, 'labels'), exist_ok=True)
    with _open_write(os.path.join(directory, manifest)) as mf:
        mf.write('intrinsics ' + ' '.join(_fmt(x) for x in
                (intr.fx, intr.fy, intr.cx, intr.cy, intr.depth_scale)) + '\n')
        mf.write('trajectory %s\n'%trajectory)
        for ff in frames:
            dpath = os.path.join('depth', '%06d.npy'%ff.index)
            lpath = os.path.join('labels', '%06d.npy'%ff.index)
            np.save(os.path.join(directory, dpath), ff.depth, allow_pickle=False)
            np.save(os.path.join(directory, lpath), ff.labels, allow_pickle=False)
            mf.write('%d %s %s\n'%(ff.index, dpath, lpath))
    write_trajectory(os.path.join(directory, trajectory), poses,
            [ff.index for ff in frames])






#############################
##
##  Matches
##
#############################
def load_matches(path, frames):
    """Read keypoint matches
    matches = load_matches(path, frames)

Each line reads "frame_a ua va frame_b ub vb" with two optional metric
depths "za zb" at the end.  Frame indices refer to Frame.index.  A
match whose coordinates fall outside the image is dropped; the returned
MatchList counts them in its 'dropped' attribute and a warning is
printed.  An unknown frame index raises FBFileError.
"""
    shapes = {ff.index:ff.depth.shape for ff in frames}
    out = MatchList()
    for lineno,tokens in _records(path):
        if len(tokens) not in (6, 8):
            raise utility.FBFileError('%s:%d: a match needs 6 or 8 fields, found %d'%(
                    path, lineno, len(tokens)))
        fa = _int(path, lineno, tokens[0])
        fb_ = _int(path, lineno, tokens[3])
        ua,va = _floats(path, lineno, tokens[1:3])
        ub,vb = _floats(path, lineno, tokens[4:6])
        za = zb = None
        if len(tokens) == 8:
            za,zb = _floats(path, lineno, tokens[6:8])
        for ii in (fa, fb_):
            if ii not in shapes:
                utility.print_error('%s:%d: unknown frame index %d'%(path, lineno, ii))
                raise utility.FBFileError('%s:%d: unknown frame index %d'%(path, lineno, ii))
        if fa == fb_:
            raise utility.FBFileError('%s:%d: a match must join two different frames'%(path, lineno))
        inside = True
        for ii,u,v in ((fa,ua,va), (fb_,ub,vb)):
            H,W = shapes[ii]
            if not (0 <= u <= W-1 and 0 <= v <= H-1):
                inside = False
        if not inside:
            out.dropped += 1
            continue
        out.append(KeypointMatch(fa, ua, va, fb_, ub, vb, za, zb))
    if out.dropped:
        utility.print_warning('%s: dropped %d matches outside the image bounds'%(path, out.dropped))
    return out


def write_matches(path, matches):
    """Write keypoint matches
    write_matches(path, matches)
"""
    with _open_write(path) as ff:
        for m in matches:
            fields = ['%d'%m.frame_a, _fmt(m.ua), _fmt(m.va),
                    '%d'%m.frame_b, _fmt(m.ub), _fmt(m.vb)]
            if m.za is not None and m.zb is not None:
                fields += [_fmt(m.za), _fmt(m.zb)]
            ff.write(' '.join(fields) + '\n')






#############################
##
##  Point clouds
##
#############################
_CLOUD_MAGIC = b'FBCL'
_CLOUD_VERSION = 1
_CLOUD_HEADER = struct.Struct('<4sIQI')
_HAS_NORMALS = 1
_HAS_PROVENANCE = 2


def export_cloud(cloud, path):
    """Write a point cloud in the binary cloud format
    export_cloud(cloud, path)

The file is a 20-byte header (magic 'FBCL', version, point count,
flags) followed by little-endian float64 points, then float64 normals
and uint8 normal flags when present, then int32 provenance when
present.
"""
    flags = 0
    if cloud.normals is not None:
        flags |= _HAS_NORMALS
    if cloud.provenance is not None:
        flags |= _HAS_PROVENANCE
    try:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(path, 'wb') as ff:
            ff.write(_CLOUD_HEADER.pack(_CLOUD_MAGIC, _CLOUD_VERSION, len(cloud), flags))
            ff.write(np.ascontiguousarray(cloud.points, dtype='<f8').tobytes())
            if flags & _HAS_NORMALS:
                ff.write(np.ascontiguousarray(cloud.normals, dtype='<f8').tobytes())
                ff.write(np.ascontiguousarray(cloud.normal_valid, dtype='u1').tobytes())
            if flags & _HAS_PROVENANCE:
                ff.write(np.ascontiguousarray(cloud.provenance, dtype='<i4').tobytes())
    except OSError as err:
        utility.print_error('Could not write to ' + repr(path))
        raise utility.FBFileError(str(err))


def import_cloud(path):
    """Read a binary point cloud
    cloud = import_cloud(path)
"""
    if not os.path.isfile(path):
        raise utility.FBFileError('File not found: ' + repr(path))
    with open(path, 'rb') as ff:
        raw = ff.read()
    if len(raw) < _CLOUD_HEADER.size:
        raise utility.FBFileError('%s: truncated header'%path)
    magic,version,count,flags = _CLOUD_HEADER.unpack_from(raw)
    if magic != _CLOUD_MAGIC:
        raise utility.FBFileError('%s: not a floorba cloud file'%path)
    if version != _CLOUD_VERSION:
        raise utility.FBFileError('%s: unsupported version %d'%(path, version))
    expected = _CLOUD_HEADER.size + 24*count
    if flags & _HAS_NORMALS:
        expected += 25*count
    if flags & _HAS_PROVENANCE:
        expected += 12*count
    if len(raw) != expected:
        raise utility.FBFileError('%s: expected %d bytes, found %d'%(path, expected, len(raw)))

    offset = _CLOUD_HEADER.size
    def take(dtype, n):
        nonlocal offset
        out = np.frombuffer(raw, dtype=dtype, count=n, offset=offset)
        offset += out.nbytes
        return out
    points = take('<f8', 3*count).reshape(-1,3).astype(float)
    normals = valid = provenance = None
    if flags & _HAS_NORMALS:
        normals = take('<f8', 3*count).reshape(-1,3).astype(float)
        valid = take('u1', count).astype(bool)
    if flags & _HAS_PROVENANCE:
        provenance = take('<i4', 3*count).reshape(-1,3).astype(np.int64)
    return fb.geometry.PointCloud(points, normals=normals,
            provenance=provenance, normal_valid=valid)






#############################
##
##  Reports
##
#############################
def write_report(path, items):
    """Write a key: value report
    write_report(path, items)

items is a dictionary or a list of (key, value) pairs.  Floats are
written with 17 significant digits; None is written as N/A.
"""
    if isinstance(items, dict):
        items = items.items()
    with _open_write(path) as ff:
        for key,value in items:
            if value is None:
                text = 'N/A'
            elif isinstance(value, (bool, np.bool_)):
                text = str(bool(value))
            elif isinstance(value, (int, np.integer)):
                text = '%d'%value
            elif isinstance(value, (float, np.floating)):
                text = _fmt(value)
            elif isinstance(value, (list, tuple, np.ndarray)):
                text = ' '.join(_fmt(x) for x in np.ravel(value))
            else:
                text = str(value)
            ff.write('%s: %s\n'%(key, text))


def load_report(path):
    """Read a key: value report into a dictionary of strings
    items = load_report(path)
"""
    out = {}
    if not os.path.isfile(path):
        raise utility.FBFileError('File not found: ' + repr(path))
    with open(path, 'r') as ff:
        for lineno,line in enumerate(ff, start=1):
            line = line.strip()
            if not line:
                continue
            if ':' not in line:
                raise utility.FBFileError('%s:%d: expected "key: value"'%(path, lineno))
            key,value = line.split(':',1)
            out[key.strip()] = value.strip()
    return out
