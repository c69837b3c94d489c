import floorba as fb
import numpy as np
import matplotlib.pyplot as plt

# Reference-free metrics against drift
#
#   MPV and MOM need no ground truth, so they are only useful if they
# grow with the actual trajectory error.  This script renders one
# synthetic scene, applies increasing amounts of drift, and plots MPV
# and MOM against the ATE of the drifted trajectory.

# Drift levels to visit: (degrees, meters) per frame
levels = [(0., 0.), (0.05, 0.002), (0.1, 0.004), (0.2, 0.008),
        (0.4, 0.016), (0.8, 0.032)]
stride = 4

fp = fb.synth.three_room_floorplan()
spec = fb.synth.SceneSpec(frames=24, seed=1, quantize=False)
scene,frames = fb.synth.generate_scene(fp, spec)

ate = []
mpv = []
mom = []
for rot,trans in levels:
    poses = fb.synth.perturb_poses(scene.trajectory, rot, trans, seed=5)
    report = fb.metrics.compute_metrics(frames, poses, reference_poses=scene.trajectory,
            stride=stride, skip=('mme',))
    ate.append(report.ate)
    mpv.append(report.mpv)
    mom.append(report.mom)
    print('drift %.2f deg %.3f m:  ATE %.4g  MPV %s  MOM %s'%(rot, trans, report.ate,
            report.mpv, report.mom))

f = plt.figure(1)
f.clf()
ax = f.add_subplot(111)
ax.plot(ate, mpv, 'ko-', label='MPV')
# MOM is None when a level finds no orthogonal planes
ax.plot(ate, [np.nan if v is None else v for v in mom], 'rs-', label='MOM')
ax.set_xlabel('ATE (m)')
ax.set_ylabel('Variance (m$^2$)')
ax.legend(loc='upper left')
ax.grid('on')
plt.show()
