import sys

from pimtool.cli import main

sys.exit(main())
