import sys

from bdlab.main import main

sys.exit(main())
