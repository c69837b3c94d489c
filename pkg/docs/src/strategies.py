import floorba as fb
import numpy as np
import matplotlib.pyplot as plt

# Walls strategy comparison
#
#   A synthetic three-room scene is rendered, its trajectory is given
# a random-walk drift, and the drifted scan is refined once with each
# of the three walls strategies.  The script prints the metrics of the
# drifted and the refined scans and plots the loss against the step.
#
#   nearest_point           every wall point is pulled toward the
#                           closest sample of the 3D floorplan
#   iterative_nearest_wall  every wall point is pulled toward the plane
#                           of the closest wall, chosen at every step
#   fixed_nearest_wall      the walls cloud is clustered once and each
#                           cluster keeps its floorplan wall
#
#  The scene is built in floorplan coordinates, so the floorplan
# alignment is skipped by passing the identity transform.

# Drift per frame
drift_rot = 0.3     # degrees
drift_trans = 0.01  # meters
# Fraction of corrupted keypoint matches
mismatch = 0.05
# Number of optimization steps
steps = 300
# A smaller stride gives denser clouds and slower steps
stride = 4

fp = fb.synth.three_room_floorplan()
# The boundary scan needs a floor peak in the height histogram
spec = fb.synth.SceneSpec(frames=24, seed=1, pitch_deg=-30.)
scene,frames = fb.synth.generate_scene(fp, spec)
drifted = fb.synth.perturb_poses(scene.trajectory, drift_rot, drift_trans, seed=2)
matches = fb.synth.synth_matches(scene, frames, pixel_noise=0.5, mismatch=mismatch)
print('%d frames, %d matches (%d corrupted)'%(len(frames), len(matches), matches.mismatched))


def evaluate(poses):
    return fb.metrics.compute_metrics(frames, poses, fp, reference_poses=scene.trajectory,
            stride=stride, skip=('mme',))


rows = [('drifted', evaluate(drifted))]
logs = {}
for strategy in fb.ba.STRATEGIES:
    cfg = fb.ba.BAConfig(walls_strategy=strategy, max_steps=steps, stride=stride)
    result = fb.ba.refine(frames, fp, matches, cfg, drifted,
            transform=fb.align.SimilarityTransform())
    logs[strategy] = result.log
    rows.append((strategy, evaluate(result.poses)))

# Print a table of the metrics
print('%24s %12s %12s %12s %12s'%('', 'MPV', 'MOM', 'NSD', 'ATE'))
for name,report in rows:
    values = ['%12.4g'%v if v is not None else '%12s'%'N/A'
            for v in (report.mpv, report.mom, report.nsd, report.ate)]
    print('%24s '%name + ' '.join(values))

f = plt.figure(1)
f.clf()
ax = f.add_subplot(111)
for strategy,log in logs.items():
    ax.semilogy(log.step, log.loss, label=strategy)
ax.set_xlabel('Step')
ax.set_ylabel('Loss')
ax.legend(loc='upper right')
ax.grid('on')
plt.show()
