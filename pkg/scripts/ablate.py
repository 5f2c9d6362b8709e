"""SSL-HSIC vs InfoNCE over three seeds on the toy world."""
import sys
from pathlib import Path

from sslhsic.cli import main

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "toy.cfg"

if __name__ == "__main__":
    sys.exit(main(["ablate", "--config", str(CONFIG), "--out", "runs/ablate"] + sys.argv[1:]))
