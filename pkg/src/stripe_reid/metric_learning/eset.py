"""Tab-separated embedding set files.

Layout::

    ESET <D> <D_p> <N>
    id  entity  camera  t_ms  g_1..g_D  p_1..p_{7*D_p}  vis_1..vis_7

Floats are written with ``repr`` so a round trip is exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import SchemaError
from ..geometry import NUM_PARTS


@dataclass(frozen=True)
class Embedding:
    global_: np.ndarray
    parts: np.ndarray
    part_visibility: np.ndarray
    label: str
    camera_id: str
    timestamp_ms: int


class EmbeddingSet(dict):
    """``sample_id -> Embedding`` with fixed global and part widths."""

    def __init__(self, dim: int, part_dim: int, items=()):
        super().__init__(items)
        self.dim = dim
        self.part_dim = part_dim

    def globals(self) -> dict[str, np.ndarray]:
        return {k: v.global_ for k, v in self.items()}


def from_model(ids, labels, meta, global_vecs, parts, vis) -> EmbeddingSet:
    global_vecs = np.asarray(global_vecs, dtype=np.float64)
    parts = np.asarray(parts, dtype=np.float64)
    out = EmbeddingSet(global_vecs.shape[1], parts.shape[2])
    for k, sid in enumerate(ids):
        cam, t = meta[k]
        out[sid] = Embedding(global_vecs[k], parts[k], np.asarray(vis[k], dtype=bool), labels[k], cam, t)
    return out


def dumps(es: EmbeddingSet) -> str:
    lines = [f"ESET {es.dim} {es.part_dim} {len(es)}"]
    for sid, e in es.items():
        fields = [sid, e.label, e.camera_id, str(int(e.timestamp_ms))]
        fields += [repr(float(v)) for v in e.global_]
        fields += [repr(float(v)) for v in np.ravel(e.parts)]
        fields += ["1" if v else "0" for v in e.part_visibility]
        lines.append("\t".join(fields))
    return "\n".join(lines) + "\n"


def loads(text: str) -> EmbeddingSet:
    lines = text.splitlines()
    if not lines:
        raise SchemaError("empty embedding file", line=1)
    head = lines[0].split()
    if len(head) != 4 or head[0] != "ESET":
        raise SchemaError("header must be 'ESET D D_p N'", line=1)
    try:
        dim, part_dim, n = (int(v) for v in head[1:])
    except ValueError as exc:
        raise SchemaError("header sizes must be integers", line=1) from exc
    width = 4 + dim + NUM_PARTS * part_dim + NUM_PARTS
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != n:
        raise SchemaError(f"header announces {n} records, found {len(body)}")
    out = EmbeddingSet(dim, part_dim)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        f = line.split("\t")
        if len(f) != width:
            raise SchemaError(f"expected {width} fields, got {len(f)}", line=lineno)
        try:
            nums = np.array([float(v) for v in f[4 : 4 + dim + NUM_PARTS * part_dim]])
            vis = np.array([int(v) for v in f[4 + dim + NUM_PARTS * part_dim :]], dtype=bool)
            t_ms = int(f[3])
        except ValueError as exc:
            raise SchemaError(f"bad number: {exc}", line=lineno) from exc
        if f[0] in out:
            raise SchemaError(f"duplicate sample id {f[0]!r}", line=lineno)
        out[f[0]] = Embedding(
            nums[:dim], nums[dim:].reshape(NUM_PARTS, part_dim), vis, f[1], f[2], t_ms
        )
    return out


def write_eset(path, es: EmbeddingSet) -> None:
    Path(path).write_text(dumps(es), encoding="utf-8")


def read_eset(path) -> EmbeddingSet:
    return loads(Path(path).read_text(encoding="utf-8"))
