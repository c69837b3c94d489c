import sys
from floorba.cli import main

sys.exit(main())
