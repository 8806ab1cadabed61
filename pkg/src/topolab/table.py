"""Flat metric records shared by every analysis family.

One stable schema: (model_id, constraint, lam, seed, metric, param1,
param2, value). CSV files carry the plain header row; the JSON twin of
each table records the schema version. Version bumps are the only
permitted column change.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
COLUMNS = ("model_id", "constraint", "lam", "seed", "metric", "param1", "param2", "value")


@dataclass
class MetricRow:
    model_id: str
    constraint: str
    lam: float
    seed: int
    metric: str
    param1: str = ""
    param2: str = ""
    value: float = 0.0


class MetricTable:
    def __init__(self, rows: list[MetricRow] | None = None):
        self.rows: list[MetricRow] = rows or []

    def append(self, model_id: str, constraint: str, lam: float, seed: int,
               metric: str, value: float, param1="", param2="") -> None:
        self.rows.append(MetricRow(
            model_id=model_id, constraint=constraint, lam=float(lam), seed=int(seed),
            metric=metric, param1=str(param1), param2=str(param2), value=float(value),
        ))

    def extend(self, other: "MetricTable") -> None:
        self.rows.extend(other.rows)

    def __len__(self) -> int:
        return len(self.rows)

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(COLUMNS)
            for r in self.rows:
                w.writerow([r.model_id, r.constraint, f"{r.lam:g}", r.seed, r.metric,
                            r.param1, r.param2, repr(r.value)])
        tmp.replace(path)

    def write_json(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        blob = {
            "schema_version": SCHEMA_VERSION,
            "columns": list(COLUMNS),
            "rows": [asdict(r) for r in self.rows],
        }
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(blob, indent=1, sort_keys=True))
        tmp.replace(path)

    @classmethod
    def read_csv(cls, path: str | Path) -> "MetricTable":
        path = Path(path)
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = tuple(next(reader))
            if header != COLUMNS:
                raise ValueError(
                    f"{path.name}: unexpected schema {header}; expected {COLUMNS}"
                )
            rows = [
                MetricRow(
                    model_id=r[0], constraint=r[1], lam=float(r[2]), seed=int(r[3]),
                    metric=r[4], param1=r[5], param2=r[6], value=float(r[7]),
                )
                for r in reader
            ]
        return cls(rows)


@dataclass
class GroupSummary:
    constraint: str
    lam: float
    metric: str
    param1: str
    param2: str
    n_seeds: int
    mean: float
    sd: float | None  # None (reported missing) for a single seed


def compare_tables(tables: list[MetricTable]) -> list[GroupSummary]:
    """Mean and sd over seeds per (constraint, lam, metric, param1, param2)."""
    groups: dict[tuple, dict[int, list[float]]] = {}
    for table in tables:
        for r in table.rows:
            key = (r.constraint, r.lam, r.metric, r.param1, r.param2)
            groups.setdefault(key, {}).setdefault(r.seed, []).append(r.value)

    out = []
    for key in sorted(groups):
        per_seed = groups[key]
        # a seed contributing several rows (e.g. repetitions) averages first
        seed_means = [float(sum(v) / len(v)) for _, v in sorted(per_seed.items())]
        mean = float(np.mean(seed_means))
        sd = float(np.std(seed_means, ddof=1)) if len(seed_means) > 1 else None
        out.append(GroupSummary(
            constraint=key[0], lam=key[1], metric=key[2], param1=key[3], param2=key[4],
            n_seeds=len(seed_means), mean=mean, sd=sd,
        ))
    return out


def write_summary_csv(summaries: list[GroupSummary], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["constraint", "lam", "metric", "param1", "param2", "n_seeds", "mean", "sd"])
        for s in summaries:
            w.writerow([s.constraint, f"{s.lam:g}", s.metric, s.param1, s.param2,
                        s.n_seeds, repr(s.mean), "" if s.sd is None else repr(s.sd)])
    tmp.replace(path)


def rank_constraints(summaries: list[GroupSummary]) -> list[str]:
    """Readable per-metric ranking lines across constraint kinds."""
    buckets: dict[tuple, list[GroupSummary]] = {}
    for s in summaries:
        buckets.setdefault((s.metric, s.param1, s.param2, s.lam), []).append(s)
    lines = []
    for key in sorted(buckets):
        entries = sorted(buckets[key], key=lambda s: -s.mean)
        if len(entries) < 2:
            continue
        order = " > ".join(f"{e.constraint}({e.mean:.4g})" for e in entries)
        metric, p1, p2, lam = key
        tag = f"{metric}" + (f"[{p1}]" if p1 else "") + (f"[{p2}]" if p2 else "")
        lines.append(f"{tag} lam={lam:g}: {order}")
    return lines
