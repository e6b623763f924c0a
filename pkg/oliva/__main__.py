import sys

from oliva.oliva_cli import main

sys.exit(main())
