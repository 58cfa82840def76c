import sys

from cdiffmr.cli import main

sys.exit(main())
