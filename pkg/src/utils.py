"""Utility functions for the laboratory: hashing, writers and console output"""
import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import pandas as pd


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars and arrays (recursively) into plain JSON types; non-finite floats become strings"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else str(value)
    return value


def canonical_json(data: Dict[str, Any]) -> str:
    return json.dumps(to_jsonable(data), sort_keys=True, indent=2)


def spec_hash(data: Dict[str, Any]) -> str:
    """
    SHA-256 of the canonical JSON form of a spec

    Args:
        data: JSON-like dictionary

    Returns:
        Hex digest, stable under key reordering
    """
    payload = json.dumps(to_jsonable(data), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


def write_json(data: Dict[str, Any], path: Union[str, Path]) -> Path:
    """Write sorted, indented JSON (byte-identical for identical data)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(data) + '\n', encoding='utf-8')
    return path


def write_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format='%.12g', lineterminator='\n')
    return path


def print_metrics(metrics: Dict[str, Any], title: str = 'estimates') -> None:
    """
    Print named values in a formatted block

    Args:
        metrics: Dictionary of values; floats get 6 significant digits
        title: Block title
    """
    print("\n" + "=" * 50)
    print(f"{title.upper()}")
    print("=" * 50)
    for name, value in metrics.items():
        shown = f"{value:.6g}" if isinstance(value, (float, np.floating)) else str(value)
        print(f"{name.upper():.<30} {shown}")
    print("=" * 50 + "\n")
