import logging
import os
import shutil
import sys
import time
from pathlib import Path
from typing import Optional, Union

LOG_FORMAT = "%(asctime)s,%(msecs)d %(name)s %(levelname)s %(message)s"


def setup_logging(loglevel: int = logging.INFO, log_file: Optional[Union[str, Path]] = None) -> None:
    """Log to stderr and, when given, append to ``log_file`` as well."""
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file, mode="a", encoding="utf-8"))
    logging.basicConfig(level=loglevel, format=LOG_FORMAT, datefmt="%H:%M:%S", handlers=handlers, force=True)


def create_timestamped_backup(folder_path: Union[str, Path], backup_path: Union[str, Path]) -> Path:
    """Copy ``folder_path`` into ``backup_path/<timestamp>`` and return the copy's path."""
    timestamp = time.strftime("%Y-%m-%d_%H-%M-%S")
    os.makedirs(backup_path, exist_ok=True)
    timestamped_backup_folder = Path(backup_path) / timestamp
    shutil.copytree(folder_path, timestamped_backup_folder, dirs_exist_ok=True)
    return timestamped_backup_folder
