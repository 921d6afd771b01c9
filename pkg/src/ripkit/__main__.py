import sys

from ripkit.cli import main

sys.exit(main())
