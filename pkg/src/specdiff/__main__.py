"""``python -m specdiff``."""

import sys

from .cli import main

sys.exit(main())
