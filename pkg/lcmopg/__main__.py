import sys

from lcmopg.harness.cli import main

sys.exit(main())
