"""Entry point for python -m regpinn."""

import sys

from .cli import main

sys.exit(main())
