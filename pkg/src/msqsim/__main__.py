import sys

from msqsim.cli import main

sys.exit(main())
