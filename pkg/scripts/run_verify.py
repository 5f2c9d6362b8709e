"""Run every verification suite and write one JSON report per suite."""
import sys

from sslhsic.cli import main

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "runs/verify"
    sys.exit(main(["verify", "all", "--out", out]))
