import sys

from mixhazard.cli import main

sys.exit(main())
