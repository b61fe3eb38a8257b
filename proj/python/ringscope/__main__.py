# SPDX-FileCopyrightText: © 2026 The ringscope Authors
# SPDX-License-Identifier: Apache-2.0

import sys

from ringscope import main


def run():
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    run()
