import sys

from threatmesh.cli import main

sys.exit(main())
