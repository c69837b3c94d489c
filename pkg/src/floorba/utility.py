"""floorba utility module

This is a collection of miscellaneous objects that are used by the
package, but that users rarely need to access explicitly.  Error
classes, the configuration classes, console messaging, and the helpers
used by the test suite live here so that they do not crowd out the
modules users need most.

Developers extending the loss terms or the file formats will need to
learn what lies herein, but most users will never need to care.
"""

import sys
import os
import traceback as tb
import numpy as np
# point back to the root package
import floorba as fb






####################################
# Error handling
#   These are classes and functions
# for floorba error handling
####################################
class Error(Exception):
    pass

# if in-memory data are inconsistent
# Raised when arrays do not conform to the shapes or counts that belong
# together; e.g. a depth grid and a label grid of different sizes.
class FBDataError(Error):
    pass

# if there is an error loading or writing files
# Raised for missing files, permission problems, and malformed records.
# Parsers include the file name and line number in the message.
class FBFileError(Error):
    pass

# if there is an illegal combination of parameters
# Raised when functions are called with parameters or values that don't
# make sense.
class FBParamError(Error):
    pass

# a pixel has no usable depth
# Backprojection raises this instead of returning a point at the camera
# center.
class FBDepthError(FBParamError):
    pass

# An analytical algorithm has failed
# Reserved for high level algorithms that may fail on legal input; e.g.
# a plane fit on collinear points or an optimization that produced NaN.
class FBAnalysisError(Error):
    pass


class FBConfigEntry:
    """One typed entry of the floorba configuration
    entry = FBConfigEntry(default=None, append=False, write=True,
            etype=None, choices=None)

default     initial value, also used by restore_default()
append      the value is a list and every write adds to it (config_file
            uses this to chain configuration scripts)
write       False makes the entry read-only (install_dir, version)
etype       cast applied to every written value, e.g. float for the
            loss weights
choices     legal values, e.g. the three walls strategies; anything
            else raises FBParamError
"""
    def __init__(self, default=None, append=False, write=True, etype=None,
            choices=None):
        # Temporarily allow writing regardless of the requested mode
        self.write_allowed = True
        self.etype = etype
        self.append = append
        self.choices = choices
        self.set_default(default)
        self.restore_default()
        self.write_allowed = write

    def __repr__(self):
        return 'FBConfigEntry(' + repr(self.value) + ')'

    def _cast(self, value):
        if self.etype:
            try:
                value = self.etype(value)
            except (TypeError, ValueError):
                raise FBParamError('Expected %s, but got %s'%(repr(self.etype), repr(value)))
        if self.choices is not None and value not in self.choices:
            raise FBParamError('Expected one of %s, but got %s'%(
                    repr(tuple(self.choices)), repr(value)))
        return value

    def write(self, value):
        """Write a value to the entry
    fbentry.write(value)
"""
        if not self.write_allowed:
            raise FBParamError('Entry is read-only.')

        # Deal with appended iterables
        if self.append and isinstance(value, (list,tuple)):
            for vv in value:
                self.write(vv)
            return

        tvalue = self._cast(value)
        if self.append:
            self.value.append(tvalue)
        else:
            self.value = tvalue

    def read(self):
        """Read a value from the entry
    fbentry.read()

This is equivalent to
    fbentry.value
"""
        return self.value

    def restore_default(self):
        """Set the value to its original default"""
        if not self.write_allowed:
            return
        if self.append:
            self.value = [self.default]
        else:
            self.value = self.default

    def set_default(self,default):
        """Set the entry's default value
    fbentry.set_default( new_default )

This operation is only allowed on writable entries.
"""
        if not self.write_allowed:
            raise FBParamError('Default cannot be set. Entry is read-only.')
        self.default = self._cast(default)


class FBConfig:
    """floorba Configuration Class

This behaves much like a dictionary that enforces the floorba
configuration rules.  To read or modify configuration parameters, access
them
    config['lambda_walls'] = 0.5

The config instance also supports iteration.  For example, this prints
all entry names and their current values:

    for key in config:
        print(key, config[key])

Configuration files are ordinary python scripts.  floorba executes them
in a scratch namespace and inspects the variables they leave behind.
Every variable must be a recognized configuration parameter.  The
'config_file' entry is an appended list; files named by earlier files
are read in turn, so the file found deepest in the chain wins.
"""
    def __init__(self, load=True):
        install_dir = os.path.abspath(os.path.dirname( fb.__file__ ))
        default_config = os.path.join( install_dir, 'config.py')

        E = FBConfigEntry
        self.entries = {
            'install_dir': E(default=install_dir, write=False, etype=str),
            'version' : E(default=fb.__version__, write=False, etype=str),
            'config_file' : E(default=default_config, append=True, etype=str),
            'config_verbose' : E(default=False, etype=bool),
            'warning_verbose' : E(default=True, etype=bool),
            'error_verbose' : E(default=True, etype=bool),
            'ba_verbose' : E(default=False, etype=bool),
            # Sensor and label conventions
            'depth_scale' : E(default=0.001, etype=float),
            'label_floor' : E(default=1, etype=int),
            'label_wall' : E(default=2, etype=int),
            'stride' : E(default=4, etype=int),
            'normal_k' : E(default=16, etype=int),
            # Floorplan model
            'fp_density' : E(default=500., etype=float),
            'fp_seed' : E(default=0, etype=int),
            # Alignment
            'gravity_bin_deg' : E(default=5., etype=float),
            'level_tolerance_deg' : E(default=1., etype=float),
            'hist_bin' : E(default=0.02, etype=float),
            'floor_margin' : E(default=0.15, etype=float),
            'occupancy_cell' : E(default=0.1, etype=float),
            'furniture_fraction' : E(default=0.5, etype=float),
            'furniture_percentile' : E(default=25., etype=float),
            'align_scale' : E(default=True, etype=bool),
            # Bundle adjustment
            'lambda_floor' : E(default=10., etype=float),
            'lambda_walls' : E(default=0.6, etype=float),
            'walls_strategy' : E(default='fixed_nearest_wall', etype=str,
                    choices=('nearest_point', 'iterative_nearest_wall',
                    'fixed_nearest_wall')),
            'geom_term' : E(default='point', etype=str,
                    choices=('point', 'reprojection', 'ray')),
            'reduction' : E(default='mean', etype=str, choices=('mean', 'sum')),
            'lr_initial' : E(default=1e-3, etype=float),
            'lr_reduced' : E(default=1e-4, etype=float),
            'lr_switch_step' : E(default=20000, etype=int),
            'convergence_eps' : E(default=1e-5, etype=float),
            'momentum' : E(default=0.9, etype=float),
            'max_steps' : E(default=40000, etype=int),
            'realign_period' : E(default=5000, etype=int),
            'iba' : E(default=False, etype=bool),
            'iba_weight' : E(default=100., etype=float),
            'cluster_angle_deg' : E(default=10., etype=float),
            'cluster_gap' : E(default=0.1, etype=float),
            # Metrics
            'metric_radius' : E(default=0.1, etype=float),
            'metric_min_points' : E(default=5, etype=int),
            'metric_max_points' : E(default=20000, etype=int),
            'ransac_threshold' : E(default=0.01, etype=float),
            'ransac_iterations' : E(default=200, etype=int),
            'ortho_deg' : E(default=5., etype=float),
            # Everything random is seeded
            'seed' : E(default=0, etype=int),
            'unit_length' : E(default='m', etype=str),
            'unit_angle' : E(default='deg', etype=str),
        }
        if load:
            self.load()

    def __repr__(self):
        out = ''
        justify = 0
        for k in self.entries:
            justify = max(justify,len(k))
        # right-align the parameter names
        fmt = '%' + str(justify) + 's : %s\n'
        parameters = list(self.entries.keys())
        parameters.sort()
        for k in parameters:
            temp = repr(self.entries[k].value)
            # If it is too long to fit on a line, cut it off
            if len(temp)+justify > 72:
                temp = temp[:66-justify]+'...'
            out += fmt%(k,temp)
        return out

    def load(self, filename=None, verbose=None):
        """Load the configuration files
    fbconfig.load()
        or
    fbconfig.load('/path/to/config.py')

Called without a filename, load() bootstraps through the default
configuration file in the installation directory and every file named
by the 'config_file' directive.  Called with a filename, the file is
read and then any new entries it appended to 'config_file' are read as
well.

Checks for unrecognized parameters and illegal values.
"""
        lead = 'FBConfig-> '

        if filename:
            if verbose is None:
                verbose = self['config_verbose']

            if not os.path.isfile( filename ):
                print_error('Could not find config file: ' + os.path.abspath(filename))
                raise FBFileError(filename)

            if verbose:
                print_line('Reading config file: ' + os.path.abspath(filename), lead)

            temp_config = {}
            with open(filename,'r') as ff:
                exec(compile(ff.read(), filename, 'exec'),{},temp_config)

            # Files may chain to others through config_file
            before = len(self.entries['config_file'].value)
            self.update(temp_config)
            if verbose:
                print_line('Found entries: ' + ' '.join(temp_config), lead + '   ')
            chained = self.entries['config_file'].value[before:]
            for thisfile in chained:
                thisfile = os.path.abspath(os.path.expandvars(os.path.expanduser(thisfile)))
                if thisfile != os.path.abspath(filename):
                    self.load(thisfile, verbose=verbose)
            return

        # The root call walks the list as it grows.  Files identified
        # deeper in the chain are read last and take precedence.
        k = 0
        found = []
        cfiles = self.entries['config_file'].value
        while k<len(cfiles):
            thisfile = os.path.expanduser(cfiles[k])
            thisfile = os.path.expandvars(thisfile)
            thisfile = os.path.abspath(thisfile)
            if thisfile in found:
                print_warning(
    'Ignoring a repeated reference to config file: "' + thisfile + '"')
            elif os.path.isfile(thisfile):
                self._read(thisfile)
                found.append(thisfile)
            elif self['config_verbose']:
                print_line('Could not find config file: ' + thisfile, lead)
            k+=1

    def _read(self, filename):
        """Execute one config file without following its chain"""
        temp_config = {}
        with open(filename,'r') as ff:
            exec(compile(ff.read(), filename, 'exec'),{},temp_config)
        if self['config_verbose']:
            print_line('Read config file: ' + filename, 'FBConfig-> ')
        self.update(temp_config)

    def update(self, new):
        """Read in parameters from a dictionary
    fbconfig.update( new_dictionary )

This function is equivalent to
for item in new_dictionary:
    fbconfig[item] = new_dictionary[item]
"""
        for item in new:
            self[item] = new[item]

    def restore_default(self, item=None):
        """Return a parameter to its default value
    fbconfig.restore_default(item)
        Or
    fbconfig.restore_default()

When item is omitted, all parameters are restored to their default.
"""
        if item is None:
            for entry in self.entries.values():
                entry.restore_default()
        else:
            if item not in self.entries:
                raise FBParamError('%s is not a floorba configuration parameter'%repr(item))
            self.entries[item].restore_default()

    def __getitem__(self, item):
        """Return the configuration value for an item
    value = config[item]
"""
        if item not in self.entries:
            raise FBParamError('%s is not a floorba configuration parameter'%repr(item))
        return self.entries[item].value

    def __setitem__(self,item,value):
        """Set the value of a configuration parameter
    config[item] = value
"""
        if item not in self.entries:
            print_error('Unrecognized configuration parameter, %s'%repr(item))
            raise FBParamError('%s is not a floorba configuration parameter'%repr(item))
        try:
            self.entries[item].write(value)
        except FBParamError:
            print_error('Failed to write to configuration parameter, %s'%repr(item))
            if self['config_verbose']:
                tb.print_exception(*sys.exc_info())
            raise

    def __contains__(self,item):
        return self.entries.__contains__(item)

    def __iter__(self):
        return self.entries.__iter__()




def split_lines( text, lead='', tail='', width=74):
    """Split a string across multiple lines without
dividing up words.  All combinations of whitespace
characters are interpreted as a single space except
repeated newlines, which represent a paragraph break.

Optional keywords are:

'lead'  (def: lead='')
Indicates a string that will be inserted at the
beginning of each line.

'tail'  (def: tail='')
A string that will be inserted at the end of each
line.

'width' (def: width=74)
The maximum line width in characters.  If the lead
and the tail add to more than 'width' characters,
then 'split_lines' returns -1.
"""
    NL = len(lead)
    NT = len(tail)
    tail += '\n'
    Nmax = int(width - NL - NT)
    if Nmax<=0:
        return -1

    out = lead

    pars = text.split('\n\n')
    for par in pars:
        words = par.split()
        Nline = 0
        for word in words:
            NW = len(word)
            # if the word is longer than a line, split it up
            while NW>Nmax:
                if Nline>0:
                    out+=tail
                out += lead + word[:Nmax] + tail + lead
                word = word[Nmax:]
                NW -= Nmax
                Nline = 0
            if Nline+1+NW>Nmax:
                out += tail + lead + word
                Nline = NW
            elif Nline==0:
                out+=word
                Nline=NW
            else:
                out += (' '+word)
                Nline += 1+NW
        out += tail

    return out


def print_error(text):
    if fb.config is None or fb.config['error_verbose']:
        sys.stdout.write(split_lines(text,lead='FB ERR: '))

def print_warning(text):
    if fb.config is None or fb.config['warning_verbose']:
        sys.stdout.write(split_lines(text,lead='FB WARN: '))

def print_line(text, lead):
    sys.stdout.write(split_lines(text,lead))




def gradtest(fn, poses, ep, text, report, step=1e-6, floor=1e-9):
    """Test an analytic pose gradient against central finite differences
    result = gradtest(fn, poses, ep, text, report)

GRADTEST is a utility function for numerical integrity checks on loss
terms.  Returns True if the test is successful and False if not.

    fn
The loss term under test.  It is called as fn(poses) and must return a
(value, gradient) tuple where gradient is an (N,6) array ordered as
[rotation increment, translation] for each of the N poses.

    poses
A geometry.PoseArray at which to evaluate.

    ep
The permissible relative error.  Each component's error is divided by
max(|numeric|, |analytic|, floor) so that components that are
numerically zero are compared in absolute terms.

    text
A single-line description inserted in the report:
    "[passed]    __text__"
    "[FAILED]    __text__"
    " ... postmortem table ... "

    report
An open file descriptor to which the report is written.  sys.stdout
works fine.

The perturbation follows the optimizer's own retraction,
PoseArray.retract(), so the two gradients are expressed in the same
tangent coordinates.
"""
    value, analytic = fn(poses)
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.zeros_like(analytic)
    N = analytic.shape[0]
    for ii in range(N):
        for jj in range(6):
            xi = np.zeros((N,6))
            xi[ii,jj] = step
            fp,_ = fn(poses.retract(xi))
            xi[ii,jj] = -step
            fm,_ = fn(poses.retract(xi))
            numeric[ii,jj] = (fp - fm) / (2*step)

    scale = np.maximum(np.maximum(np.abs(numeric), np.abs(analytic)), floor)
    error = np.abs(numeric - analytic) / scale
    I = np.nonzero(error.ravel() > ep)[0]

    if I.size:
        report.write('[FAILED]    ' + text + '\n')
        for label,table in zip(['analytic', 'numeric', 'error'],
                [analytic, numeric, error]):
            report.write('{: >15s}: '.format(label))
            for vv in table.ravel()[I]:
                report.write('{: >15.6e}'.format(vv))
            report.write('\n')
        return False

    report.write('[passed]    ' + text + '\n')
    return True
