"""Entry point for the unitprompt pipeline."""
from __future__ import annotations

import sys

from unitprompt.main import main


if __name__ == "__main__":
    sys.exit(main())
