"""Time exact vs RFF HSIC estimation and report log-log slopes."""
import sys

from sslhsic.cli import main

if __name__ == "__main__":
    sys.exit(main(["bench", "--out", "runs/bench"] + sys.argv[1:]))
