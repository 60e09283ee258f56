"""
Run Store - Handles JSON and CSV output files of one run directory
"""

import json
import logging
import threading
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import pandas as pd

from ..constants import CSV_FLOAT_FORMAT

logger = logging.getLogger(__name__)


class RunStore:
    """Owns one output directory; every write goes through one lock"""

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self._lock = threading.Lock()
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def read_json(self, name: str) -> Dict[str, Any]:
        """Safely read a JSON file; missing or malformed files read as {}"""
        with self._lock:
            try:
                with open(self.path(name), "r", encoding="utf-8") as f:
                    return json.load(f)
            except (FileNotFoundError, json.JSONDecodeError):
                return {}

    def write_json(self, name: str, data: Any) -> Path:
        target = self.path(name)
        with self._lock:
            with open(target, "w", encoding="utf-8") as f:
                json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
                f.write("\n")
        logger.debug("Wrote %s", target)
        return target

    def write_csv(self, name: str, rows: Union[pd.DataFrame, Iterable[Mapping[str, Any]]],
                  columns: Optional[Sequence[str]] = None) -> Path:
        """Write rows with fixed float formatting so reruns are byte-identical"""
        frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
        if columns is not None:
            frame = frame.reindex(columns=list(columns))
        target = self.path(name)
        with self._lock:
            frame.to_csv(target, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
        logger.debug("Wrote %d rows to %s", len(frame), target)
        return target

    def read_csv(self, name: str) -> pd.DataFrame:
        with self._lock:
            return pd.read_csv(self.path(name))

    def listing(self) -> List[str]:
        return sorted(p.name for p in self.out_dir.iterdir() if p.is_file())
