import sys

from upldp.api.cli import main

sys.exit(main())
