import sys

from tilda.cli import main

sys.exit(main())
