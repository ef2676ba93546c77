#!/usr/bin/env python3
"""Joint drift + diffusion estimation experiment (writes
learned_diffusion.csv)."""
import pathlib
import sys

from dspp_dlm.cli import main

CFG = str(pathlib.Path(__file__).resolve().parent.parent / "configs" / "learned_diffusion.toml")

if __name__ == "__main__":
    for step in (["generate"], ["train"], ["baseline"], ["report", "--suite", "diffusion"]):
        rc = main(["--config", CFG, *step])
        if rc != 0:
            sys.exit(rc)
