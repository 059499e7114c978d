import sys

from markovtilt.cli import main

sys.exit(main())
