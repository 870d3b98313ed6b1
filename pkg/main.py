import sys

from harness_app.cli import cli

sys.exit(cli())
