"""Runtime settings read from the environment (``.env`` supported).

Environment variables
---------------------
ADLOC_RUN_ROOT       Directory that receives run directories (default: runs).
ADLOC_LOG_LEVEL      Root log level for the CLI (default: INFO).
ADLOC_DATABASE_FILE  Experiment ledger file inside the run root (default: experiments.db).
ADLOC_RECORD_RUNS    Set to 0 to skip writing the experiment ledger (default: 1).
ADLOC_RUN_SLOW       Set to 1 to enable the slow test tier (default: 0).
"""

import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

RUN_ROOT: Path = Path(os.environ.get("ADLOC_RUN_ROOT", "runs"))
LOG_LEVEL: str = os.environ.get("ADLOC_LOG_LEVEL", "INFO").upper()
DATABASE_FILE: str = os.environ.get("ADLOC_DATABASE_FILE", "experiments.db")
RECORD_RUNS: bool = os.environ.get("ADLOC_RECORD_RUNS", "1").lower() not in ("0", "false", "no")
RUN_SLOW: bool = os.environ.get("ADLOC_RUN_SLOW", "0").lower() in ("1", "true", "yes")
