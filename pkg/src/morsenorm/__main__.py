"""``python -m morsenorm``."""

import sys

from .cli import main

sys.exit(main())
