"""Report plumbing: run configurations, deterministic JSON, atomic writes."""

from __future__ import annotations

import dataclasses
import json
import math
import os
import tempfile
from fractions import Fraction

import numpy as np

from . import __version__

SCHEMA = "renorm-lab-report/1"


@dataclasses.dataclass
class RunConfig:
    subcommand: str
    params: dict
    outputs: dict = dataclasses.field(default_factory=dict)
    version: str = __version__
    schema: str = SCHEMA

    def to_dict(self) -> dict:
        return {"schema": self.schema, "version": self.version,
                "subcommand": self.subcommand, "params": self.params,
                "outputs": self.outputs}


def plain(obj):
    """Convert numpy scalars/arrays, dataclasses and exact numbers to JSON types."""
    if obj is None or isinstance(obj, (bool, str)):
        return obj
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, np.ndarray):
        return [plain(x) for x in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, range)):
        return [plain(x) for x in obj]
    if hasattr(obj, "to_dict"):
        return plain(obj.to_dict())
    if dataclasses.is_dataclass(obj):
        return plain(dataclasses.asdict(obj))
    return str(obj)


def _float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def dumps(obj, indent: int = 2) -> str:
    """JSON text with every float written to 17 significant digits."""

    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, bool) or o is None:
            return json.dumps(o)
        if isinstance(o, int):
            return str(o)
        if isinstance(o, float):
            return _float(o)
        if isinstance(o, str):
            return json.dumps(o, ensure_ascii=False)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(k, ensure_ascii=False)}: {enc(v, level + 1)}"
                     for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, list):
            if not o:
                return "[]"
            if all(isinstance(x, (int, float, bool)) or x is None for x in o):
                return "[" + ", ".join(enc(x, level + 1) for x in o) + "]"
            return "[\n" + ",\n".join(pad + enc(x, level + 1) for x in o) + "\n" + end + "]"
        raise TypeError(f"cannot encode {type(o)}")

    return enc(plain(obj), 0) + "\n"


def write_atomic(path: str, text: str) -> None:
    """Write through a temporary file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def report_document(config: RunConfig, result, passed) -> dict:
    return {"config": config.to_dict(), "pass": passed, "result": result}


def write_report(path: str, config: RunConfig, result, passed) -> None:
    write_atomic(path, dumps(report_document(config, result, passed)))


def kernel_csv(offsets: np.ndarray, values: np.ndarray) -> str:
    d = offsets.shape[1]
    lines = [",".join([f"n{i + 1}" for i in range(d)] + ["value"])]
    for off, val in zip(offsets.tolist(), np.asarray(values, dtype=float).tolist()):
        lines.append(",".join(str(int(c)) for c in off) + "," + format(val, ".17g"))
    return "\n".join(lines) + "\n"
