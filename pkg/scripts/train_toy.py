"""Train on the toy world with configs/toy.cfg; extra args are passed through."""
import sys
from pathlib import Path

from sslhsic.cli import main

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "toy.cfg"

if __name__ == "__main__":
    sys.exit(main(["train", "--config", str(CONFIG), "--out", "runs/toy"] + sys.argv[1:]))
