import sys

from mmdforge.cli import main


sys.exit(main())
