"""Allow python -m levyrkhs."""

import sys

from .cli import main

sys.exit(main())
