"""
Per-sample gate states and their long-format table.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import polars as pl

from pyrgate.csg import LEVELS, CCUOutput
from pyrgate.isg import ISGOutput

RECORD_SCHEMA = {"sample_id": pl.String, "kind": pl.String, "i": pl.Int64, "j_or_k": pl.Int64, "value": pl.Float64}


@dataclass
class GateRecord:
    """
    Mean gate openness for one sample.

    isg_b maps (stage, block) to a coarse selection gate, isg_a maps a stage
    to its fine selection gate and csg_w is the 4x4 path matrix indexed
    ``[source, target]`` (None when the connector is not gated).
    """
    sample_id: str
    isg_b: dict[tuple[int, int], float] = field(default_factory=dict)
    isg_a: dict[int, float] = field(default_factory=dict)
    csg_w: np.ndarray | None = None

    def rows(self) -> list[dict]:
        rows = [
            {"sample_id": self.sample_id, "kind": "isg_b", "i": stage, "j_or_k": block, "value": v}
            for (stage, block), v in self.isg_b.items()
        ]
        rows += [
            {"sample_id": self.sample_id, "kind": "isg_a", "i": stage, "j_or_k": stage, "value": v}
            for stage, v in self.isg_a.items()
        ]
        if self.csg_w is not None:
            rows += [
                {"sample_id": self.sample_id, "kind": "csg_w", "i": i, "j_or_k": k,
                 "value": float(self.csg_w[a, b])}
                for a, i in enumerate(LEVELS) for b, k in enumerate(LEVELS)
            ]
        return rows


def gate_records(sample_ids: list[str], isg_out: ISGOutput | None, ccu_out: CCUOutput | None) -> list[GateRecord]:
    """
    Split batched gate signals into one record per sample. Values are
    clipped to [0, 1] to absorb rounding in the squashing functions.
    """
    records = [GateRecord(sid) for sid in sample_ids]
    if isg_out is not None:
        for kind, stage, block, values in isg_out.openness():
            for rec, v in zip(records, np.clip(values, 0.0, 1.0)):
                if kind == "isg_b":
                    rec.isg_b[(stage, block)] = float(v)
                else:
                    rec.isg_a[stage] = float(v)
    if ccu_out is not None:
        for rec, matrix in zip(records, np.clip(ccu_out.openness_matrix(), 0.0, 1.0)):
            rec.csg_w = matrix
    return records


def records_frame(records: list[GateRecord]) -> pl.DataFrame:
    """Long format with columns sample_id, kind, i, j_or_k, value."""
    return pl.DataFrame([row for rec in records for row in rec.rows()], schema=RECORD_SCHEMA, orient="row")
