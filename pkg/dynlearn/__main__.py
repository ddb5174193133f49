import sys

from dynlearn.main import main

sys.exit(main())
