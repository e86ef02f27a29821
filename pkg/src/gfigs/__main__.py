import sys

from gfigs.cli import main

sys.exit(main())
