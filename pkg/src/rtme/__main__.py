import sys

from rtme.cli import main

sys.exit(main())
