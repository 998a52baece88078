"""Small shared helpers."""
from __future__ import annotations

import os
import tempfile


def atomic_write_text(path, text: str):
    """Write via temp file + rename so rerunning a command never leaves a
    half-written output."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
