"""Unit conversion module for floorba

Internally, floorba works in meters and radians.  Floorplan files are
often drawn in centimeters, millimeters, or even inches, and users
usually think about angles in degrees, so the conversions between those
systems live here.

To print a summary of all conversions supplied, call
>>> units.show()
     length : m cm mm km in ft
      angle : rad deg grad rev

To obtain a list for the units recognized by a particular conversion
class, call the get() method,
>>> units.length.get()
dict_keys(['m', 'cm', 'mm', 'km', 'in', 'ft'])

Conversions that are called without unit strings fall back on the
configured defaults, 'unit_length' and 'unit_angle'.  Floorplan files
use the length conversion to interpret their 'units' header.
"""

import numpy as np
import floorba as fb


class Conversion:
    """CONVERSION CLASS
The unit conversion class simulates a function that converts a value of
one set of units to another.

  new_value = conversion_object( old_value, from_units, to_units )

for example

  value_m = length(350., 'cm', 'm')

When unit specifiers are omitted, the conversion object will throw an
error unless conversion_object.config_default is a string.  If so, it
specifies a parameter that users can set in their floorba configuration
files.

There is an optional 'exponent' parameter.  This is to allow support for
cases like

  area_m2 = length(area_cm2, 'cm', 'm', exponent=2)
"""

    def __init__(self, table, config_default=None):
        """Conversion(table, config_default)
Conversion objects are initialized with a conversion table in the format
of a dictionary.  The dictionary keys are the strings that identify the
various units, and the values are the size of each unit in a common
base.

>>> cmm = Conversion({'m':1., 'cm':0.01})
>>> cmm(250., from_units='cm', to_units='m')
2.5

Note that the values in the table are chosen so that
>>> new_value = old_value * table[from_units] / table[to_units]
"""
        self.table = table
        self.config_default = config_default

    def __contains__(self, unit):
        """Test whether a particular unit string is supported"""
        return (unit in self.table)

    def _resolve(self, units, which):
        if units is None:
            if self.config_default is None:
                raise fb.utility.FBParamError('Missing %s, and no default specified'%which)
            units = fb.config[self.config_default]
        if units not in self.table:
            raise fb.utility.FBParamError('Unrecognized unit: %s'%repr(units))
        return units

    def __call__(self, value=1., from_units=None, to_units=None, exponent=None, inplace=False):
        """Executes a conversion from [from_units]**[exponent] to
[to_units]**[exponent].  By default, [value] is 1., so that the value
returned is the appropriate conversion factor.
"""
        from_units = self._resolve(from_units, 'from_units')
        to_units = self._resolve(to_units, 'to_units')
        # Do not do the conversion if it is not necessary
        if from_units == to_units:
            return value

        conv = self.table[from_units] / self.table[to_units]
        if exponent:
            conv **= exponent

        if inplace and isinstance(value, np.ndarray):
            return np.multiply(value, conv, out=value)

        return np.multiply(value, conv)

    def __getitem__(self,item):
        return self.table.__getitem__(item)

    def __setitem__(self,item,value):
        return self.table.__setitem__(item,value)

    def get(self):
        """Return an unordered list of the units supported"""
        return self.table.keys()




def setup():
    """Set up the conversion functions
    setup()

Defines the module-level conversion objects, length and angle.  Calling
setup() again discards any units that were added to the tables at run
time.
"""
    global length, angle

    length = Conversion({
        'm':1.,
        'cm':0.01,
        'mm':0.001,
        'km':1000.,
        'in':0.0254,
        'ft':0.3048},
        config_default='unit_length')

    angle = Conversion({
        'rad':1.,
        'deg':np.pi/180.,
        'grad':np.pi/200.,
        'rev':2*np.pi},
        config_default='unit_angle')


def show():
    """Print a summary of available units"""
    for name in ['length', 'angle']:
        conv = globals()[name]
        print('{:>11s} : '.format(name) + ' '.join(conv.get()))


setup()
