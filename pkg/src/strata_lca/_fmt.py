"""Number formatting shared by the JSON and CSV writers."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

SIG_DIGITS = 12


def round_sig(value: float, digits: int = SIG_DIGITS) -> float:
    return float(f"{float(value):.{digits}g}")


def dumps(doc: Any) -> str:
    return json.dumps(doc, indent=2) + "\n"


def write_json(path: Path, doc: Any) -> None:
    Path(path).write_text(dumps(doc), encoding="utf-8")
