import sys

from intersnap_archive.cli import main


sys.exit(main())
