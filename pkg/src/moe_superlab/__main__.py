import sys

from moe_superlab.cli import main

sys.exit(main())
