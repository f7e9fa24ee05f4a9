import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Callable, Union

import numpy as np
import pandas as pd

FRAME_SUFFIXES = {"csv": ".csv", "parquet": ".parquet", "pickle": ".pickle",
                  "feather": ".feather"}


def _atomic_write(output_path: Path, write: Callable[[str], None]) -> None:
    """Write through a temporary file in the target directory, then rename."""
    fd, tmp = tempfile.mkstemp(dir=output_path.parent, prefix=".tmp-",
                               suffix=output_path.suffix)
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, output_path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def save_frame(data: pd.DataFrame, file_type: str,
               output_dir: Union[str, Path], name: str,
               logger_name: str = "lengthlab_logger") -> Path:
    """
    Save a DataFrame into the output directory.

    Args:
        data (pd.DataFrame): Frame to save, e.g. a TrainLog frame.
        file_type (str): csv, parquet, pickle or feather.
        output_dir (str | Path): Directory receiving the file, created if
                                 missing.
        name (str): File name without extension.

    Returns:
        Path: The path of the saved file.

    Raises:
        ValueError: If an unsupported file type is provided.
    """
    logger = logging.getLogger(logger_name)
    if file_type not in FRAME_SUFFIXES:
        logger.warning(f"Unsupported file type: {file_type}")
        raise ValueError(f"Unsupported file type: {file_type}")
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    output_path = output_dir / f"{name}{FRAME_SUFFIXES[file_type]}"

    if file_type == "csv":
        _atomic_write(output_path, lambda p: data.to_csv(p, index=False))
    elif file_type == "parquet":
        _atomic_write(output_path, lambda p: data.to_parquet(p, index=False))
    elif file_type == "pickle":
        _atomic_write(output_path, lambda p: data.to_pickle(p))
    else:
        # feather stores no index
        _atomic_write(output_path,
                      lambda p: data.reset_index(drop=True).to_feather(p))
    logger.info(f"Output {file_type} file saved at {output_path}")
    return output_path


def _plain(obj: Any) -> Any:
    """JSON-ready copy: numpy scalars unwrapped, NaN and inf as null."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def save_json(document: Any, output_dir: Union[str, Path], name: str,
              logger_name: str = "lengthlab_logger") -> Path:
    """
    Save a JSON document with sorted keys into the output directory.

    Identical documents give byte-identical files.

    Returns:
        Path: The path of the saved file.
    """
    logger = logging.getLogger(logger_name)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    output_path = output_dir / f"{name}.json"
    text = json.dumps(_plain(document), sort_keys=True, indent=2,
                      allow_nan=False) + "\n"

    def write(path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)

    _atomic_write(output_path, write)
    logger.info(f"Output json file saved at {output_path}")
    return output_path
