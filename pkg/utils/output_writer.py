#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Output Writer
Writes run artifacts atomically (temporary file in the target directory,
then rename) and records each one in a manifest with its SHA-256 hash.
"""

import hashlib
import json
import logging
import os
import tempfile

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
FLOAT_FORMAT = "%.10g"


def _json_default(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, pd.DataFrame):
        return value.to_dict("records")
    raise TypeError(f"cannot serialize {type(value).__name__}")


class OutputWriter:
    """Single writer for every artifact of one run"""

    def __init__(self, output_dir):
        self.output_dir = output_dir
        self.artifacts = {}
        os.makedirs(output_dir, exist_ok=True)

    def path(self, name):
        return os.path.join(self.output_dir, name)

    def _write_bytes(self, name, payload, kind):
        target = self.path(name)
        os.makedirs(os.path.dirname(target), exist_ok=True)
        fd, temp = tempfile.mkstemp(prefix=".tmp-", dir=os.path.dirname(target))
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(payload)
            os.replace(temp, target)
        except Exception:
            if os.path.exists(temp):
                os.remove(temp)
            raise
        self.artifacts[name] = {"kind": kind, "bytes": len(payload), "sha256": hashlib.sha256(payload).hexdigest()}
        logger.info(f"Wrote {target}")
        return target

    def write_csv(self, name, frame):
        text = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return self._write_bytes(name, text.encode("utf-8"), "csv")

    def write_json(self, name, payload):
        text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default, allow_nan=True) + "\n"
        return self._write_bytes(name, text.encode("utf-8"), "json")

    def write_text(self, name, text):
        return self._write_bytes(name, text.encode("utf-8"), "text")

    def write_manifest(self, track, status, config=None):
        """Write manifest.json; artifacts listed in name order, no timestamps"""
        manifest = {
            "track": track,
            "status": status,
            "artifacts": [dict(name=name, **self.artifacts[name]) for name in sorted(self.artifacts)],
        }
        if config is not None:
            manifest["config"] = config
        text = json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n"
        target = self.path(MANIFEST_NAME)
        fd, temp = tempfile.mkstemp(prefix=".tmp-", dir=self.output_dir)
        with os.fdopen(fd, "wb") as f:
            f.write(text.encode("utf-8"))
        os.replace(temp, target)
        return target


def format_table(frame, title=None, digits=4):
    """Aligned plain-text rendering of a result table"""
    if frame is None or len(frame) == 0:
        body = "(no rows)"
    else:
        shown = frame.copy()
        for column in shown.columns:
            if pd.api.types.is_float_dtype(shown[column]):
                shown[column] = shown[column].map(lambda v: f"{v:.{digits}g}" if np.isfinite(v) else "NA")
        body = shown.to_string(index=False)
    if title:
        return f"{title}\n{'=' * len(title)}\n{body}\n"
    return body + "\n"
