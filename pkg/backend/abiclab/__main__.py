import sys

from abiclab.cli import main

sys.exit(main())
