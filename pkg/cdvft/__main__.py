import sys

from cdvft.cli import main

sys.exit(main())
