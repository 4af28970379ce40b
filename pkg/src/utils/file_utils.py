import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import pandas as pd
from loguru import logger

from src.config.settings import settings


@dataclass(frozen=True)
class OutputPaths:
    """Files written next to one experiment CSV"""

    csv: Path

    @property
    def stem(self) -> Path:
        return self.csv.with_suffix("")

    @property
    def summary(self) -> Path:
        return self.stem.with_name(self.stem.name + ".summary.json")

    @property
    def config(self) -> Path:
        return self.stem.with_name(self.stem.name + ".config.json")

    def trace(self, label: str) -> Path:
        return self.stem.with_name(f"{self.stem.name}.{label}.ndjson")

    def groups(self, label: str) -> Path:
        return self.stem.with_name(f"{self.stem.name}.{label}.groups.json")


def get_output_paths(output: Optional[str], default_name: str = "results.csv") -> OutputPaths:
    """Resolve the CSV path; bare names land in OUTPUT_DIR"""
    path = Path(output) if output else Path(settings.OUTPUT_DIR) / default_name
    if path.suffix != ".csv":
        path = path.with_suffix(".csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    return OutputPaths(path)


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    # fixed line terminator keeps reruns byte-identical across platforms
    frame.to_csv(path, index=False, lineterminator="\n")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def write_json(data: Any, path: Path) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")
    logger.debug(f"Wrote {path}")
    return path


def write_ndjson(text: str, path: Path) -> Path:
    path.write_text(text)
    logger.debug(f"Wrote trace {path}")
    return path


def read_json(path: str) -> Any:
    """Load a JSON config file; the caller maps failures to config errors"""
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)
