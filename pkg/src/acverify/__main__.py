import sys

from acverify.cli import main

sys.exit(main())
