import sys

from leotrace.cli import main

sys.exit(main())
