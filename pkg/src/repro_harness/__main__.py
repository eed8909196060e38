import sys

from repro_harness.cli import main

sys.exit(main())
