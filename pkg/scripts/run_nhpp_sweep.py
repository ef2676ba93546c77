#!/usr/bin/env python3
"""Deterministic-intensity robustness sweep over the piece count d
(trains one model per d with diffusion d^{-1/2} sqrt(z); writes
nhpp_sweep.csv)."""
import pathlib
import sys

from dspp_dlm.cli import main

CFG = str(pathlib.Path(__file__).resolve().parent.parent / "configs" / "nhpp_sweep.toml")

if __name__ == "__main__":
    for step in (["generate"], ["train"], ["baseline"], ["report", "--suite", "nhpp"]):
        rc = main(["--config", CFG, *step])
        if rc != 0:
            sys.exit(rc)
