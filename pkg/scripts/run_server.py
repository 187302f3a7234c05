#!/usr/bin/env python3
from __future__ import annotations

import os
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

from app.main import main  # noqa: E402

if __name__ == "__main__":
    argv = sys.argv[1:]
    # bundled config unless --config or $SPS_CONFIG says otherwise
    if "--config" not in argv and not os.getenv("SPS_CONFIG"):
        argv = ["--config", str(ROOT / "config" / "sps.json"), *argv]
    main(argv)
