"""Id-keyed dense vectors and the ``EMB1`` file format.

Layout: ``b"EMB1"``, u32 dimension, u64 count, then ``count`` records of
(u64 id, ``dimension`` float32), all little-endian.
"""
from __future__ import annotations

from os import PathLike

import numpy as np

from .binio import BinReader, BinWriter, FormatError

MAGIC = b"EMB1"


class EmbeddingStore:
    """Immutable mapping from article id to a float32 vector."""

    def __init__(self, ids, vectors):
        ids = np.asarray(ids, dtype=np.uint64)
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ValueError("vectors must be a 2-d array")
        if len(ids) != vectors.shape[0]:
            raise ValueError(f"{len(ids)} ids for {vectors.shape[0]} vectors")
        self.ids = ids
        self.vectors = vectors
        self._row = {int(i): r for r, i in enumerate(ids.tolist())}
        if len(self._row) != len(ids):
            raise ValueError("duplicate ids in embedding store")
        self.ids.flags.writeable = False
        self.vectors.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, article_id) -> bool:
        return int(article_id) in self._row

    def row(self, article_id) -> int:
        try:
            return self._row[int(article_id)]
        except KeyError:
            raise KeyError(f"article {int(article_id)} has no embedding") from None

    def rows(self, article_ids) -> np.ndarray:
        return np.fromiter((self.row(a) for a in article_ids), dtype=np.int64)

    def get(self, article_id) -> np.ndarray:
        return self.vectors[self.row(article_id)]

    def take(self, article_ids) -> np.ndarray:
        return self.vectors[self.rows(article_ids)]

    def normalized(self) -> "EmbeddingStore":
        """Copy with unit-L2 rows (all-zero rows stay zero)."""
        return EmbeddingStore(self.ids, normalize_rows(self.vectors))

    def write(self, path: str | PathLike) -> None:
        rec = np.dtype([("id", "<u8"), ("vec", "<f4", (self.dim,))])
        out = np.empty(len(self), dtype=rec)
        out["id"] = self.ids
        out["vec"] = self.vectors
        with open(path, "wb") as fh:
            w = BinWriter(fh)
            w.magic(MAGIC)
            w.pack("IQ", self.dim, len(self))
            fh.write(out.tobytes())

    @classmethod
    def read(cls, path: str | PathLike) -> "EmbeddingStore":
        with open(path, "rb") as fh:
            r = BinReader(fh, str(path))
            r.expect_magic(MAGIC)
            dim, count = r.unpack("IQ")
            if dim == 0:
                raise FormatError(f"{path}: zero embedding dimension")
            rec = np.dtype([("id", "<u8"), ("vec", "<f4", (dim,))])
            data = r.array(rec, count) if count else np.empty(0, dtype=rec)
            r.expect_eof()
        return cls(data["id"].astype(np.uint64), data["vec"].astype(np.float32).reshape(count, dim))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return np.array_equal(self.ids, other.ids) and np.array_equal(self.vectors, other.vectors)

    def __repr__(self) -> str:
        return f"EmbeddingStore(count={len(self)}, dim={self.dim})"


def normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
