"""Versioned JSON reports and CSV summary tables."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = "ergolim.report/1"


def clean(obj):
    """Plain JSON types: numpy scalars/arrays converted, NaN mapped to None."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) else v
    return obj


@dataclass
class Report:
    kind: str
    config: dict
    results: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    steps: int = 0
    failures: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION
    tables: dict = field(default_factory=dict, repr=False)  # CSV summary, not serialized

    def verdict(self, name: str, ok: bool, /, **evidence):
        """Record a named verdict together with the numbers behind it."""
        self.verdicts[name] = {"passed": bool(ok), "evidence": clean(evidence)}

    @property
    def passed(self) -> bool:
        return all(v["passed"] for v in self.verdicts.values())

    def to_dict(self, timing: bool = True) -> dict:
        d = {
            "schema_version": self.schema_version,
            "kind": self.kind,
            "config": clean(self.config),
            "results": clean(self.results),
            "verdicts": clean(self.verdicts),
            "passed": self.passed,
            "steps": int(self.steps),
            "failures": clean(self.failures),
        }
        if timing:
            d["timing"] = clean(self.timing)
        return d

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema_version')!r}")
        return cls(kind=d["kind"], config=d["config"], results=d["results"],
                   verdicts=d["verdicts"], steps=d["steps"], failures=d.get("failures", {}),
                   timing=d.get("timing", {}), schema_version=d["schema_version"])

    @classmethod
    def from_json(cls, text: str) -> "Report":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        return isinstance(other, Report) and self.to_dict() == other.to_dict()

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    def summary_lines(self) -> list[str]:
        lines = [f"{self.kind}: {'PASS' if self.passed else 'FAIL'}"]
        for name, v in self.verdicts.items():
            lines.append(f"  [{'pass' if v['passed'] else 'FAIL'}] {name}")
        return lines


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
