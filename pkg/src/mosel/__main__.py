import sys

from mosel.harness.cli import main

sys.exit(main())
