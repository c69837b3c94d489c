"""floorba command line

    floorba synth   --out DIR [--frames N ...]
    floorba align   --scene DIR [--floorplan FILE] --out DIR
    floorba refine  --scene DIR [--floorplan FILE] --out DIR [BA options]
    floorba metrics --scene DIR [--floorplan FILE] [--reference CLOUD]
                    [--groundtruth FILE] --out DIR

Every numeric option defaults to the floorba configuration.  A file
given with --config is loaded first, and the flags on the command line
win over it.  --show-config prints the resolved configuration and exits.

The exit status is 0 when every stage succeeded, 1 when a stage raised
a floorba error, and 2 for usage errors.
"""

import argparse
import copy
import os
import sys
import numpy as np
import floorba as fb


# Command line flag -> configuration entry
_CONFIG_FLAGS = {
        'lambda_floor':'lambda_floor',
        'lambda_walls':'lambda_walls',
        'walls_strategy':'walls_strategy',
        'geom_term':'geom_term',
        'lr':'lr_initial',
        'lr_reduced':'lr_reduced',
        'lr_switch_step':'lr_switch_step',
        'momentum':'momentum',
        'realign_period':'realign_period',
        'max_steps':'max_steps',
        'stride':'stride',
        'radius':'metric_radius',
        'seed':'seed',
        'iba':'iba'}


class RunConfig:
    """Paths and options of one command line run
    run = RunConfig(args)

scene, floorplan, out   paths from the command line; floorplan defaults
                        to floorplan.txt in the scene directory
ba                      ba.BAConfig resolved from the configuration
radius, seed            metric radius and random seed
"""
    def __init__(self, args):
        self.command = args.command
        self.scene = getattr(args, 'scene', None)
        self.out = getattr(args, 'out', None)
        self.floorplan = getattr(args, 'floorplan', None)
        if self.floorplan is None and self.scene is not None:
            default = os.path.join(self.scene, 'floorplan.txt')
            if os.path.isfile(default):
                self.floorplan = default
        self.transform = getattr(args, 'transform', 'estimate')
        self.ba = fb.ba.BAConfig.from_config()
        self.radius = fb.config['metric_radius']
        self.seed = fb.config['seed']

    def __repr__(self):
        return 'RunConfig(%r, scene=%r, out=%r)'%(self.command, self.scene, self.out)

    def validate(self):
        if self.scene is not None and not os.path.isdir(self.scene):
            fb.utility.print_error('Scene directory not found: ' + repr(self.scene))
            raise fb.utility.FBFileError(self.scene)
        if self.floorplan is not None and not os.path.isfile(self.floorplan):
            fb.utility.print_error('Floorplan not found: ' + repr(self.floorplan))
            raise fb.utility.FBFileError(self.floorplan)
        if self.out is not None:
            os.makedirs(self.out, exist_ok=True)


def _strategy(text):
    try:
        return fb.ba.strategy_name(text)
    except fb.utility.FBParamError:
        raise argparse.ArgumentTypeError('invalid walls strategy: %r (choose from %s)'%(
                text, ', '.join(fb.ba.STRATEGIES + ('np', 'inw', 'fnw'))))


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default=argparse.SUPPRESS,
            help='configuration file loaded before the flags are applied')
    common.add_argument('--show-config', action='store_true', default=argparse.SUPPRESS,
            help='print the resolved configuration and exit')
    common.add_argument('--seed', type=int, default=argparse.SUPPRESS,
            help='random seed')

    parser = argparse.ArgumentParser(prog='floorba', parents=[common],
            description='Floorplan-aware bundle adjustment of RGB-D scans')
    sub = parser.add_subparsers(dest='command', metavar='command')

    p = sub.add_parser('synth', parents=[common], help='generate a synthetic scene')
    p.add_argument('--out', required=True, help='output scene directory')
    p.add_argument('--floorplan', help='floorplan file; a three-room plan by default')
    p.add_argument('--frames', type=int, default=24)
    p.add_argument('--width', type=int, default=160)
    p.add_argument('--height', type=int, default=120)
    p.add_argument('--drift-rot', type=float, default=0.3,
            help='rotation drift per frame in degrees')
    p.add_argument('--drift-trans', type=float, default=0.01,
            help='translation drift per frame in meters')
    p.add_argument('--mismatch', type=float, default=0.,
            help='fraction of corrupted matches')
    p.add_argument('--pixel-noise', type=float, default=0.,
            help='keypoint noise in pixels')
    p.add_argument('--float-depth', action='store_true',
            help='store metric float depth instead of millimeters')

    for name,text in (('align', 'align a floorplan with a scan'),
            ('refine', 'refine the camera poses of a scan'),
            ('metrics', 'evaluate a posed scan')):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument('--scene', required=True, help='scene directory with manifest.txt')
        p.add_argument('--floorplan', help='floorplan file; SCENE/floorplan.txt by default')
        p.add_argument('--out', required=True, help='output directory')
        p.add_argument('--stride', type=int, default=None)
        p.add_argument('--transform', choices=('estimate', 'identity'), default='estimate',
                help='estimate the floorplan alignment or take the scan as aligned')
        if name == 'refine':
            p.add_argument('--matches', help='match file; SCENE/matches.txt by default')
            p.add_argument('--lambda-floor', type=float, default=None)
            p.add_argument('--lambda-walls', type=float, default=None)
            p.add_argument('--walls-strategy', type=_strategy, default=None,
                    help='nearest_point (np), iterative_nearest_wall (inw), '
                    'or fixed_nearest_wall (fnw)')
            p.add_argument('--geom-term', choices=('point', 'reprojection', 'ray'), default=None)
            p.add_argument('--lr', type=float, default=None, help='initial learning rate')
            p.add_argument('--lr-reduced', type=float, default=None)
            p.add_argument('--lr-switch-step', type=int, default=None)
            p.add_argument('--momentum', type=float, default=None)
            p.add_argument('--realign-period', type=int, default=None)
            p.add_argument('--max-steps', type=int, default=None)
            p.add_argument('--iba', action='store_const', const=True, default=None,
                    help='hold the geometric term at its own minimum')
        if name in ('refine', 'metrics'):
            p.add_argument('--radius', type=float, default=None, help='metric radius in meters')
        if name == 'metrics':
            p.add_argument('--trajectory', help='poses to evaluate; the scene trajectory by default')
            p.add_argument('--reference', help='reference cloud for NND')
            p.add_argument('--groundtruth', help='reference trajectory for ATE')
    return parser


def _snapshot():
    return {key:copy.copy(entry.value) for key,entry in fb.config.entries.items()}


def _restore(snapshot):
    for key,value in snapshot.items():
        fb.config.entries[key].value = value


def apply_args(args):
    """Load --config and write the given flags into the configuration"""
    if getattr(args, 'config', None):
        fb.config.load(args.config)
    for flag,key in _CONFIG_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            fb.config[key] = value




####################################
# Commands
####################################
def _load_scene(run, trajectory=None):
    frames = fb.dat.load_sequence(run.scene)
    poses = fb.dat.initial_poses(frames)
    if trajectory is not None:
        index,poses = fb.dat.load_trajectory(trajectory)
        lookup = {ii:kk for kk,ii in enumerate(index)}
        missing = [f.index for f in frames if f.index not in lookup]
        if missing:
            raise fb.utility.FBFileError('%s: no pose for frame %d'%(trajectory, missing[0]))
        order = [lookup[f.index] for f in frames]
        poses = fb.geometry.PoseArray(poses.quats[order], poses.translations[order])
    return frames, poses


def _floorplan(run, required=True):
    if run.floorplan is None:
        if required:
            fb.utility.print_error('A floorplan is required: pass --floorplan.')
            raise fb.utility.FBFileError('No floorplan.')
        return None
    return fb.dat.parse_floorplan(run.floorplan)


def _fixed_transform(run):
    if run.transform == 'identity':
        return fb.align.SimilarityTransform()
    return None


def cmd_synth(args, run):
    spec = fb.synth.SceneSpec(frames=args.frames, width=args.width, height=args.height,
            quantize=not args.float_depth, seed=fb.config['seed'])
    if args.floorplan:
        fp = fb.dat.parse_floorplan(args.floorplan)
    else:
        fp = fb.synth.three_room_floorplan()
    scene,frames = fb.synth.generate_scene(fp, spec)
    poses = fb.synth.perturb_poses(scene.trajectory, args.drift_rot, args.drift_trans,
            seed=fb.config['seed'])
    matches = fb.synth.synth_matches(scene, frames, args.pixel_noise, args.mismatch)
    fb.synth.write_scene(scene, frames, args.out, poses, matches)
    fb.utility.print_line('%d frames, %d landmarks, %d matches (%d corrupted) in %s'%(
            len(frames), len(scene.landmarks), len(matches), matches.mismatched, args.out),
            'synth: ')
    return 0


def cmd_align(args, run):
    frames,poses = _load_scene(run)
    fp = _floorplan(run)
    clouds = fb.clouds.build_semantic_clouds(frames, poses, run.ba.stride)
    result = fb.align.align(clouds.full, fp, up_prior=fb.ba.camera_up(poses),
            viewpoints=poses.centers(), transform=_fixed_transform(run))
    items = result.transform.to_items()
    for key,value in sorted(result.diagnostics.items()):
        items.append((key, value))
    fb.dat.write_report(os.path.join(run.out, 'transform.txt'), items)
    fb.dat.export_cloud(result.boundary, os.path.join(run.out, 'boundary.fbc'))
    fb.utility.print_line('yaw %.2f %s, scale %.4f, residual %.4g %s'%(
            fb.units.angle(result.transform.yaw, 'rad'), fb.config['unit_angle'],
            result.transform.scale,
            fb.units.length(result.diagnostics['residual'], 'm'), fb.config['unit_length']),
            'align: ')
    return 0


def _leveled_metrics(frames, poses, fp2d, level, run, groundtruth=None):
    leveled = poses.left_multiply(level)
    report = fb.metrics.compute_metrics(frames, leveled, fp2d, radius=run.radius,
            stride=run.ba.stride, seed=run.seed)
    if groundtruth is not None:
        report.ate = fb.metrics.ate(poses, groundtruth)
    return report


def _groundtruth(run, frames):
    path = os.path.join(run.scene, 'groundtruth.txt')
    if not os.path.isfile(path):
        return None
    _,poses = _load_scene(run, path)
    return poses


def cmd_refine(args, run):
    frames,poses = _load_scene(run)
    fp = _floorplan(run)
    mpath = args.matches or os.path.join(run.scene, 'matches.txt')
    matches = fb.dat.load_matches(mpath, frames)
    result = fb.ba.refine(frames, fp, matches, run.ba, poses,
            transform=_fixed_transform(run))
    T = result.alignment.transform
    fp2d = fp.transformed(T)
    groundtruth = _groundtruth(run, frames)

    out = run.out
    fb.dat.write_trajectory(os.path.join(out, 'trajectory.txt'), result.poses,
            [f.index for f in frames])
    result.log.write(os.path.join(out, 'convergence.txt'))
    fb.dat.write_report(os.path.join(out, 'transform.txt'), T.to_items())
    fb.dat.export_cloud(fb.clouds.build_cloud(frames, poses, run.ba.stride),
            os.path.join(out, 'before.fbc'))
    fb.dat.export_cloud(fb.clouds.build_cloud(frames, result.poses, run.ba.stride),
            os.path.join(out, 'after.fbc'))
    before = _leveled_metrics(frames, poses, fp2d, result.level, run, groundtruth)
    after = _leveled_metrics(frames, result.poses, fp2d, result.level, run, groundtruth)
    before.write(os.path.join(out, 'metrics_before.txt'))
    after.write(os.path.join(out, 'metrics_after.txt'))
    fb.utility.print_line('%d steps, loss %.6g -> %.6g'%(len(result.log),
            result.log.loss[0], result.log.loss[-1]), 'refine: ')
    return 0


def cmd_metrics(args, run):
    frames,poses = _load_scene(run, args.trajectory)
    fp = _floorplan(run, required=False)
    fp2d = None
    level = np.eye(3)
    if fp is not None:
        clouds = fb.clouds.build_semantic_clouds(frames, poses, run.ba.stride)
        result = fb.align.align(clouds.full, fp, up_prior=fb.ba.camera_up(poses),
                viewpoints=poses.centers(), transform=_fixed_transform(run))
        fp2d = fp.transformed(result.transform)
        level = result.transform.level
    reference = None
    if args.reference:
        reference = fb.dat.import_cloud(args.reference)
    groundtruth = None
    if args.groundtruth:
        _,groundtruth = _load_scene(run, args.groundtruth)
    report = fb.metrics.compute_metrics(frames, poses.left_multiply(level), fp2d,
            reference=reference, radius=run.radius, stride=run.ba.stride, seed=run.seed)
    if groundtruth is not None:
        report.ate = fb.metrics.ate(poses, groundtruth)
    report.write(os.path.join(run.out, 'metrics.txt'))
    unit = fb.config['unit_length']
    for key,value in report.items()[:len(report.keys)]:
        if value is None:
            text = 'N/A'
        elif key in report.lengths:
            text = '%.6g %s'%(fb.units.length(value, 'm'), unit)
        else:
            text = '%.6g'%value
        fb.utility.print_line('%s: %s'%(key, text), 'metrics: ')
    return 0


_COMMANDS = {'synth':cmd_synth, 'align':cmd_align, 'refine':cmd_refine,
        'metrics':cmd_metrics}


def main(argv=None):
    """Run the command line; returns the exit status"""
    parser = build_parser()
    args = parser.parse_args(argv)
    snapshot = _snapshot()
    try:
        try:
            apply_args(args)
        except fb.utility.Error as err:
            fb.utility.print_error('config: ' + str(err))
            return 1
        if getattr(args, 'show_config', False):
            sys.stdout.write(repr(fb.config))
            return 0
        if args.command is None:
            parser.print_usage()
            return 2
        try:
            run = RunConfig(args)
            run.validate()
            return _COMMANDS[args.command](args, run)
        except fb.utility.Error as err:
            fb.utility.print_error('%s: %s: %s'%(args.command, type(err).__name__, err))
            return 1
    finally:
        _restore(snapshot)


if __name__ == '__main__':
    sys.exit(main())
