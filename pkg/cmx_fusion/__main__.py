"""Run the harness with `python -m cmx_fusion`."""

from cmx_fusion.harness.cli import app

app()
