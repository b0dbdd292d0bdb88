import sys

from quadtarget.cli import main

sys.exit(main())
