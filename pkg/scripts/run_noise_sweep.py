#!/usr/bin/env python3
"""Occupancy prediction vs the truth's noise magnitude (trains one model
per noise level; writes eta_sweep.csv)."""
import pathlib
import sys

from dspp_dlm.cli import main

CFG = str(pathlib.Path(__file__).resolve().parent.parent / "configs" / "noise_sweep.toml")

if __name__ == "__main__":
    for step in (["generate"], ["train"], ["baseline"], ["report", "--suite", "eta"]):
        rc = main(["--config", CFG, *step])
        if rc != 0:
            sys.exit(rc)
