import sys

from klrl.cli import main

sys.exit(main())
