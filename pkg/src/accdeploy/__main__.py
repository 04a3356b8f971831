import sys

from accdeploy.cli import main

sys.exit(main())
