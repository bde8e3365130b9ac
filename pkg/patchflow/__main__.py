"""Allow running with `python -m patchflow`."""

import runpy

runpy.run_module("patchflow.sim.cli", run_name="__main__")
