"""Convenience launcher.

Running `python simulate.py <command> ...` behaves like `python -m patchflow`.
"""

import runpy

if __name__ == "__main__":
    runpy.run_module("patchflow.sim.cli", run_name="__main__")
