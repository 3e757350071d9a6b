import sys

from pyrgate.cli import main

sys.exit(main())
