import sys

from attnwalk.cli import main

sys.exit(main())
