"""Ensemble table of equilibrium values and its CSV form.

One row per (quantity, initial state, realization, disorder point).  Rows
carry the config hash and master seed so any file can be traced back to the
run that produced it.  Floats are written with ``repr`` so identical runs
produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

COLUMNS = [
    "config_hash", "master_seed", "quantity", "state_index", "realization",
    "h_index", "h", "q_eq", "per_time", "retention", "seed", "status",
]


class TableFormatError(ValueError):
    pass


@dataclass
class Cell:
    value: float | None
    per_time: tuple = ()
    retention: float = 1.0
    seed: int = 0
    status: str = "ok"

    @property
    def missing(self) -> bool:
        return self.status != "ok" or self.value is None or not np.isfinite(self.value)


@dataclass
class EnsembleTable:
    h_grid: np.ndarray
    config_hash: str = ""
    master_seed: int = 0
    cells: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def __post_init__(self):
        self.h_grid = np.asarray(self.h_grid, dtype=float)

    def add(self, quantity: str, state: int, realization: int, h_index: int, cell: Cell):
        key = (quantity, int(state), int(realization), int(h_index))
        if key in self.cells:
            raise KeyError(f"duplicate cell {key}")
        self.cells[key] = cell

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def quantities(self) -> list:
        return sorted({k[0] for k in self.cells}, key=_quantity_order)

    @property
    def states(self) -> list:
        return sorted({k[1] for k in self.cells})

    @property
    def realizations(self) -> list:
        return sorted({k[2] for k in self.cells})

    def values(self, quantity: str, state: int, h_index: int) -> np.ndarray:
        """Non-missing Q_eq values over realizations, in realization order."""
        out = [
            (k[2], c.value) for k, c in self.cells.items()
            if k[0] == quantity and k[1] == state and k[3] == h_index and not c.missing
        ]
        out.sort()
        return np.array([v for _, v in out], dtype=float)

    def matrix(self, quantity: str, state: int) -> np.ndarray:
        """(n_h, R) array of values with NaN for missing cells."""
        reals = self.realizations
        col = {r: i for i, r in enumerate(reals)}
        out = np.full((self.h_grid.size, len(reals)), np.nan)
        for (q, s, r, hi), c in self.cells.items():
            if q == quantity and s == state and not c.missing:
                out[hi, col[r]] = c.value
        return out

    # -- serialization -----------------------------------------------------

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for key in sorted(self.cells, key=lambda k: (_quantity_order(k[0]), k[1], k[3], k[2])):
            q, s, r, hi = key
            c = self.cells[key]
            writer.writerow([
                self.config_hash, self.master_seed, q, s, r, hi, repr(float(self.h_grid[hi])),
                "" if c.value is None else repr(float(c.value)),
                ";".join(repr(float(x)) for x in c.per_time),
                repr(float(c.retention)), c.seed, c.status,
            ])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "EnsembleTable":
        try:
            with open(path, encoding="utf-8", newline="") as fh:
                rows = list(csv.DictReader(fh))
        except OSError as exc:
            raise TableFormatError(f"cannot read {path}: {exc}") from exc
        if not rows:
            raise TableFormatError(f"{path} holds no cells")
        if list(rows[0].keys()) != COLUMNS:
            raise TableFormatError(f"{path}: unexpected columns {list(rows[0].keys())}")
        try:
            h_points = {int(r["h_index"]): float(r["h"]) for r in rows}
            grid = np.array([h_points[i] for i in range(max(h_points) + 1)])
            table = cls(grid, rows[0]["config_hash"], int(rows[0]["master_seed"]))
            for r in rows:
                per_time = tuple(float(x) for x in r["per_time"].split(";") if x)
                value = float(r["q_eq"]) if r["q_eq"] else None
                table.add(r["quantity"], int(r["state_index"]), int(r["realization"]),
                          int(r["h_index"]),
                          Cell(value, per_time, float(r["retention"]), int(r["seed"]), r["status"]))
        except (KeyError, ValueError) as exc:
            raise TableFormatError(f"{path}: corrupt table ({exc})") from exc
        return table


def _quantity_order(q: str):
    base = {"C": 0, "S": 1, "D": 2}
    return (base.get(q, 3), q)
