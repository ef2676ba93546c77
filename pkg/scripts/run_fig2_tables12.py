#!/usr/bin/env python3
"""In-sample estimation + run-through tables: generate, train, fit the
piecewise baselines, then emit intensity curves and both occupancy tables."""
import pathlib
import sys

from dspp_dlm.cli import main

CFG = str(pathlib.Path(__file__).resolve().parent.parent / "configs" / "fig2_tables12.toml")

if __name__ == "__main__":
    for step in (["generate"], ["train"], ["baseline"], ["report", "--suite", "core"]):
        rc = main(["--config", CFG, *step])
        if rc != 0:
            sys.exit(rc)
