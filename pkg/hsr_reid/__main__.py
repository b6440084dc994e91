"""Entry point for `python -m hsr_reid`"""

import sys

from .cli import main

sys.exit(main())
