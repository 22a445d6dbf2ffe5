"""
Script para ejecutar el CLI de demlab
"""

import sys

from demlab.cli.expcli import main

if __name__ == "__main__":
    sys.exit(main())
