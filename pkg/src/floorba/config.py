#
# floorba configuration file
#
# When floorba loads config files, it automatically looks for 'config.py'
# in the installation directory.  Here, administrators can set site-wide
# defaults or point floorba to users' own config files in their home
# directories.
#
# Configuration files are ordinary python scripts that are executed when
# floorba decides to load its configuration options.  floorba inspects the
# variables the script leaves behind.  If the parameters are recognized,
# they are loaded into the floorba.config dictionary.
#
# If floorba finds variable names that aren't recognized configuration
# parameters, it throws an error.  That means that while the configuration
# files are ordinary code, there are strict rules for what variables can be
# defined and what their values can be.
#
# There are three types of parameters:
# 1 - Normal parameters require a specific data type, but each time they are
#     written, the prior value is lost.
# e.g.
#>  lambda_walls = 0.5  # will overwrite the default of 0.6
#
# 2 - Appended parameters never lose data, but contain a list of all prior
#     values.  To write multiple values at once, assign a list.
# e.g.
#>  config_file = ["/etc/floorba/config.py", "~/.floorba/config.py"]
#
# 3 - Read-only parameters supply a value for information purposes only.
# e.g.
#>  version = "596.0.1" # Will throw an error



#** Configuration files **
# This tells floorba where to find other configuration files.  The last
# file loaded is given precedence.  References to ~ and environment
# variables are resolved.
#
#> config_file = '~/.floorba/config.py'


# Should the configuration loader print its activity to stdout?
config_verbose = False


#** Messages **
# Warnings are printed when the data are suspicious but usable: a weak
# floor peak, a low-confidence gravity estimate, dropped matches.
#> warning_verbose = True
#> error_verbose = True
#
# Print a convergence table while optimizing
#> ba_verbose = False


#** Sensor conventions **
# Meters per raw depth unit.  Most consumer RGB-D sensors write millimeters.
#> depth_scale = 0.001
#
# Semantic label values for floor and wall pixels.  Any other label is
# treated as unlabeled.
#> label_floor = 1
#> label_wall = 2
#
# Only every stride-th pixel in each direction is backprojected
#> stride = 4
#
# Neighbors used for normal estimation
#> normal_k = 16


#** Floorplan **
# Points per meter of wall when sampling the floorplan model
#> fp_density = 500.
#> fp_seed = 0


#** Alignment **
#> gravity_bin_deg = 5.
#> level_tolerance_deg = 1.
#> hist_bin = 0.02
#> floor_margin = 0.15
#> occupancy_cell = 0.1
#
# A cell is a wall cell when its points span this fraction of the scan
# height.  Cells with fewer points than this percentile of the wall-cell
# counts are dropped as furniture.
#> furniture_fraction = 0.5
#> furniture_percentile = 25.
#
# Estimate a floorplan scale factor.  Set this to False when the
# floorplan is known to be metric.
#> align_scale = True


#** Bundle adjustment **
#> lambda_floor = 10.
#> lambda_walls = 0.6
#
# Wall association strategy: 'nearest_point', 'iterative_nearest_wall',
# or 'fixed_nearest_wall'
#> walls_strategy = 'fixed_nearest_wall'
#
# Feature term: 'point', 'reprojection', or 'ray'
#> geom_term = 'point'
#
# Loss terms are averaged over their residual counts when 'mean'
#> reduction = 'mean'
#
#> lr_initial = 1e-3
#> lr_reduced = 1e-4
#> lr_switch_step = 20000
#> convergence_eps = 1e-5
#> momentum = 0.9
#> max_steps = 40000
#
# Steps between re-alignments.  Zero disables re-alignment.
#> realign_period = 5000
#
# Constrain the feature term to its initial value while optimizing the
# floorplan terms.
#> iba = False
#> iba_weight = 100.
#
#> cluster_angle_deg = 10.
#> cluster_gap = 0.1


#** Metrics **
#> metric_radius = 0.1
#> metric_min_points = 5
#> metric_max_points = 20000
#> ransac_threshold = 0.01
#> ransac_iterations = 200
#> ortho_deg = 5.


# Everything random draws from a generator seeded here
#> seed = 0


#** Units **
# Units of the reported yaw and of the lengths printed to the console.
# The fixed keys of the result files stay in meters and radians.
#> unit_length = 'm'
#> unit_angle = 'deg'
