"""
bilevel-consensus 命令列入口
用法請見 `python main.py --help`
"""

import sys

from harness.cli import main

if __name__ == "__main__":
    sys.exit(main())
