"""Storage of place-wise outputs."""
from __future__ import annotations

# std
from io import BytesIO
import os
import traceback
from typing import NewType, Optional

# module
from ._constants import _AnyPath, PCD, SCANS_DIR, SCD, SCDS_DIR
from ._logging import logger
from .errors import Error, ErrorKind, LoopGraphError

descr_t = NewType("descr_t", str)


# Data storage on disk
class DiskStorage:
    """Storage engine writing the place-wise directory layout.

    ```
    out/
      Scans/000000.pcd ...
      SCDs/000000.scd ...
      optimized_poses.txt
      odom_poses.txt
      loops.txt
    ```
    """

    def __init__(self: DiskStorage, path: _AnyPath) -> None:
        """Return a storage engine that saves to a given path."""
        self.path = os.path.abspath(path)
        logger.info(f"saving outputs to {self.path}")
        try:
            os.makedirs(os.path.join(self.path, SCANS_DIR), exist_ok=True)
            os.makedirs(os.path.join(self.path, SCDS_DIR), exist_ok=True)
        except OSError as e:
            raise LoopGraphError(ErrorKind.IoError, f"{self.path}: {e}")
        self.buffer_length = 16 * 1024

    def clear(self: DiskStorage) -> int:
        """Remove place-wise files left by an earlier run; return their count."""
        removed = 0
        for sub, ext in ((SCANS_DIR, PCD), (SCDS_DIR, SCD)):
            folder = os.path.join(self.path, sub)
            for name in sorted(os.listdir(folder)):
                if name.endswith(ext):
                    os.remove(os.path.join(folder, name))
                    removed += 1
        if removed:
            logger.debug(f"removed {removed} stale files from {self.path}")
        return removed

    def get_key(self: DiskStorage, *parts: str) -> descr_t:
        """Return the key for a relative location."""
        return descr_t(os.path.join(self.path, *parts))

    def put(self: DiskStorage, key: descr_t, data: BytesIO) -> Optional[Error]:
        """Write stream data to a given key.

        Note: this function does not .close() the stream.
        """
        try:
            with open(key, "wb") as fdst:
                while True:
                    buf = data.read(self.buffer_length)
                    if not buf:
                        break
                    fdst.write(buf)

        except Exception:
            tb_exc = traceback.format_exc()
            return Error(kind=ErrorKind.IoError, source=key, details=tb_exc)
        return None

    def save(self: DiskStorage, key: descr_t, data: bytes) -> None:
        """Write bytes to a key, raising on failure."""
        err = self.put(key, BytesIO(data))
        if err is not None:
            err.throw()
