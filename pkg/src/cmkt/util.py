"""Small shared helpers."""

from __future__ import annotations

import hashlib
import json
import math


def _default(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    if hasattr(o, "__dict__"):
        return vars(o)
    return str(o)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=_default, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def finite(x: float) -> bool:
    return math.isfinite(x)
