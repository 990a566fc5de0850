"""
Persistence helpers for run artifacts.

Data files (CSV, JSONL) are written byte-for-byte reproducibly: UTF-8, LF line
endings, sorted keys, fixed float formatting. Every data file carries the run
id in its name; the RunManifest ties the files of one command invocation
together.
"""
import csv
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np

from src import __version__

FLOAT_FORMAT = '%.10g'
RUN_ID_PREFIX = 12


def _jsonable(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def compute_run_id(config: Dict[str, Any], command: str = '') -> str:
    """
    SHA-256 of the normalized JSON config snapshot.

    Args:
        config: Config snapshot (ExperimentConfig.to_dict())
        command: Subcommand name, so two commands with equal configs differ

    Returns:
        Hex digest
    """
    normalized = json.dumps({"command": command, "config": config}, sort_keys=True,
                            separators=(',', ':'), default=_jsonable)
    return hashlib.sha256(normalized.encode('utf-8')).hexdigest()


def output_path(out_dir: str, stem: str, run_id: str, ext: str) -> str:
    """`<out_dir>/<stem>.<run_id[:12]>.<ext>`"""
    return os.path.join(out_dir, f"{stem}.{run_id[:RUN_ID_PREFIX]}.{ext}")


def _ensure_parent(path: str):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def write_json(path: str, obj: Any):
    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(obj, f, indent=2, sort_keys=True, default=_jsonable)
        f.write('\n')


def read_json(path: str) -> Any:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def write_jsonl(path: str, records: Iterable[Dict[str, Any]]) -> int:
    """Write one compact JSON object per line; returns the number of records."""
    _ensure_parent(path)
    n = 0
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True, separators=(',', ':'), default=_jsonable))
            f.write('\n')
            n += 1
    return n


def read_jsonl(path: str) -> List[Dict[str, Any]]:
    with open(path, 'r', encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]


def format_cell(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % float(value)
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
    """Write a CSV with a header row, LF line endings and fixed float formatting."""
    _ensure_parent(path)
    n = 0
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"Row has {len(row)} cells, header has {len(header)}")
            writer.writerow([format_cell(v) for v in row])
            n += 1
    return n


def read_csv(path: str) -> List[Dict[str, str]]:
    with open(path, 'r', encoding='utf-8', newline='') as f:
        return list(csv.DictReader(f))


@dataclass
class RunManifest:
    """Record of one command invocation and the files it produced."""

    command: str
    config: Dict[str, Any]
    run_id: str = ''
    code_version: str = __version__
    outputs: Dict[str, str] = field(default_factory=dict)
    status: str = 'running'
    started_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    wall_clock_seconds: float = 0.0
    notes: List[str] = field(default_factory=list)
    _t0: float = field(default_factory=time.monotonic, repr=False)

    def __post_init__(self):
        if not self.run_id:
            self.run_id = compute_run_id(self.config, self.command)

    def path_for(self, out_dir: str, stem: str, ext: str) -> str:
        return output_path(out_dir, stem, self.run_id, ext)

    def add_output(self, name: str, path: str):
        self.outputs[name] = path

    def finish(self, ok: bool):
        self.status = 'ok' if ok else 'failed'
        self.wall_clock_seconds = round(time.monotonic() - self._t0, 3)

    def missing_outputs(self) -> List[str]:
        """Referenced files that do not exist or do not carry the run id."""
        tag = self.run_id[:RUN_ID_PREFIX]
        return [p for p in self.outputs.values()
                if not os.path.exists(p) or tag not in os.path.basename(p)]

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop('_t0')
        return data

    def save(self, out_dir: str) -> str:
        path = self.path_for(out_dir, f"manifest.{self.command}", 'json')
        write_json(path, self.to_dict())
        return path

    @classmethod
    def load(cls, path: str) -> 'RunManifest':
        data = read_json(path)
        return cls(**data)
