import sys

from isvae.cli import main

sys.exit(main())
