#!/usr/bin/env python3
"""
Launch script for the Beamsight multimodal beam prediction workbench.
"""

import os
import sys

# Add the src directory to the path
sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))

from cli.main import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
