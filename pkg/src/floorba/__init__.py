"""floorba    Floorplan-aware bundle adjustment for RGB-D scans

floorba refines the camera trajectory of an indoor RGB-D scan using a 2D
floorplan as a weak prior.  Labeled floor and wall pixels are pulled
toward the floor plane and the floorplan walls, while matched keypoints
keep the frames consistent with one another.

*** Refining a scan ***

Load a scan and a floorplan, and hand them to the bundle adjuster.
  >>> import floorba as fb
  >>> frames = fb.dat.load_sequence('scan')
  >>> plan = fb.dat.parse_floorplan('scan/floorplan.txt')
  >>> matches = fb.dat.load_matches('scan/matches.txt', frames)
  >>> result = fb.ba.refine(frames, plan, matches)

The refined poses are in result.poses, and result.log holds one record
per optimization step.  The weights, the walls strategy, and the
learning rate schedule are set through fb.ba.BAConfig,
  >>> cfg = fb.ba.BAConfig(walls_strategy='inw', lambda_walls=0.5)
  >>> result = fb.ba.refine(frames, plan, matches, cfg)

*** Evaluating ***

  >>> cloud = fb.clouds.build_cloud(frames, result.poses)
  >>> fb.metrics.mpv(cloud)
  >>> report = fb.metrics.compute_metrics(frames, result.poses)

*** Synthetic scenes ***

  >>> scene, frames = fb.synth.generate_scene(fb.synth.three_room_floorplan())
  >>> noisy = fb.synth.perturb_poses(scene.trajectory, 0.3, 0.01)

*** Configuration ***

Every tunable constant lives in the configuration dictionary,
  >>> fb.config['lambda_walls'] = 0.5
  >>> print(fb.config)

The command line tool 'floorba' wraps the same operations.
"""

# This is the authoritative version number.
# setup.py looks for this line to establish the version
# MUST be unindented
__version__ = "1.0.0"

# Messages issued while the configuration is loading fall back on
# their defaults
config = None

# loading the floorba utility functions
from . import utility
# load the configuration
config = utility.FBConfig()

from . import units
from . import geometry
from . import floorplan
from . import dat
from . import clouds
from . import align
from . import solve
from . import ba
from . import metrics
from . import synth
from . import cli
