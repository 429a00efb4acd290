"""
Report files. JSON is canonical (sorted keys, no timestamps) so identical
configs give byte-identical output; tables go through pandas.
"""
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from runconfig import RunConfig

logger = logging.getLogger(__name__)


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def dumps(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, default=_plain) + "\n"


def envelope(config: RunConfig, result: dict) -> dict:
    resolution = config.resolved_resolution()
    return {
        "mode": config.mode,
        "config": config.resolved(),
        "config_hash": config.content_hash(),
        "tolerances": config.resolved_tolerances().as_dict(),
        "resolution": resolution.as_dict() if resolution else None,
        "result": result,
    }


def write_json(out_dir, name: str, payload) -> Path:
    path = Path(out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(payload), encoding="utf-8")
    logger.info("wrote %s", path)
    return path


def write_csv(out_dir, name: str, table) -> Path:
    path = Path(out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = table if isinstance(table, pd.DataFrame) else pd.DataFrame(table)
    frame.to_csv(path, index=False)
    logger.info("wrote %s (%d rows)", path, len(frame))
    return path


def key_paths(payload, prefix: str = "") -> list[str]:
    """Sorted dotted key paths of nested dicts; list items collapse to ``[]``."""
    out: set[str] = set()
    if isinstance(payload, dict):
        for key, value in payload.items():
            path = f"{prefix}.{key}" if prefix else str(key)
            out.add(path)
            out.update(key_paths(value, path))
    elif isinstance(payload, list):
        for item in payload:
            out.update(key_paths(item, f"{prefix}[]"))
    return sorted(out)
