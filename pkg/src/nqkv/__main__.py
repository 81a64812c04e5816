import sys

from nqkv.cli import main

sys.exit(main())
