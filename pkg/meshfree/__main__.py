import sys

from meshfree.cli import main

sys.exit(main())
