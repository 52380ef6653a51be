#!/usr/bin/env python3

import sys

from sbauth.command_line_interface import main

if __name__ == '__main__':
    sys.exit(main())
