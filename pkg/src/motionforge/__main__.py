import sys

from motionforge.cli import main

sys.exit(main())
