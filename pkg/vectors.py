"""
Vector Tables

Dense word vectors (read from fastText-style text files) and trained entity
vectors share one table type. Nearest-neighbor queries are exact brute force
over the table, using the same Euclidean distance as the linker.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from autodiff import euclidean_rows
from logger_setup import logger


class VectorFormatError(ValueError):
    """A word-vector file line has the wrong shape or is not numeric."""


@dataclass
class EmbeddingTable:
    """Key -> vector of a fixed dimension ``dim``; rows stored in insertion order."""
    dim: int
    keys: List[str] = field(default_factory=list)
    _index: Dict[str, int] = field(default_factory=dict, repr=False)
    _rows: List[np.ndarray] = field(default_factory=list, repr=False)
    _matrix: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError(f"Vector dimension must be positive, got {self.dim}")

    def __len__(self):
        return len(self.keys)

    def __contains__(self, key):
        return key in self._index

    def insert(self, key: str, vector) -> None:
        vector = np.asarray(vector, dtype=np.float64).reshape(-1)
        if vector.shape[0] != self.dim:
            raise ValueError(f"Vector for {key!r} has dimension {vector.shape[0]}, table expects {self.dim}")
        if key in self._index:
            self._rows[self._index[key]] = vector.copy()
        else:
            self._index[key] = len(self.keys)
            self.keys.append(key)
            self._rows.append(vector.copy())
        self._matrix = None

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = np.vstack(self._rows) if self._rows else np.zeros((0, self.dim))
        return self._matrix

    def items(self):
        for key in self.keys:
            yield key, self._rows[self._index[key]]


def lookup(table: EmbeddingTable, key: str) -> Optional[np.ndarray]:
    """The vector stored under ``key``, or None."""
    position = table._index.get(key)
    if position is None:
        return None
    return table._rows[position]


def _is_header(fields: Sequence[str]) -> bool:
    if len(fields) != 2:
        return False
    try:
        int(fields[0])
        int(fields[1])
    except ValueError:
        return False
    return True


def load_word_vectors(path, limit: Optional[int] = None) -> EmbeddingTable:
    """
    Read "word v1 ... vd" lines. A first line of two integers ("count dim")
    is treated as a header and skipped. ``limit`` caps the number of rows.
    With ``limit=0`` the table is empty but still carries the file's dimension.

    Raises:
        VectorFormatError: On a ragged or non-numeric line (with its line number).
    """
    if limit is not None and limit < 0:
        raise ValueError(f"limit must be non-negative, got {limit}")
    table = None
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            fields = line.split()
            if line_number == 1 and _is_header(fields):
                continue
            if not fields or not fields[0]:
                continue
            word, raw = fields[0], fields[1:]
            try:
                vector = np.array([float(v) for v in raw], dtype=np.float64)
            except ValueError as e:
                raise VectorFormatError(f"{path}: line {line_number}: non-numeric value") from e
            if table is None:
                if len(vector) == 0:
                    raise VectorFormatError(f"{path}: line {line_number}: no vector values")
                table = EmbeddingTable(dim=len(vector))
            if limit is not None and len(table) >= limit:
                break
            if len(vector) != table.dim:
                raise VectorFormatError(
                    f"{path}: line {line_number}: dimension {len(vector)}, expected {table.dim}")
            table.insert(word, vector)

    if table is None:
        raise VectorFormatError(f"{path}: no vectors found")
    logger.info(f"Loaded {len(table)} vectors of dimension {table.dim} from {path}")
    return table


def save_vectors(table: EmbeddingTable, path) -> None:
    """Write the table in the word-vector text format, with a "count dim" header."""
    with open(path, 'w', encoding='utf-8') as f:
        f.write(f"{len(table)} {table.dim}\n")
        for key, vector in table.items():
            f.write(key + ' ' + ' '.join(map(repr, vector.tolist())) + '\n')


def knn(table: EmbeddingTable, query, k: int) -> List[Tuple[str, float]]:
    """The k nearest keys to ``query`` by Euclidean distance, ascending, ties by key."""
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (table.dim,):
        raise ValueError(f"Query has shape {query.shape}, table dimension is {table.dim}")
    if len(table) == 0 or k <= 0:
        return []
    distances = euclidean_rows(table.matrix, query)
    ranked = sorted(zip(table.keys, distances.tolist()), key=lambda item: (item[1], item[0]))
    return ranked[:k]


def neighborhood_purity(table: EmbeddingTable, labels: Mapping[str, str], k: int = 10) -> float:
    """
    Mean fraction of each labeled key's k nearest other keys that share its
    label. Keys without a label are ignored on both sides.
    """
    keys = [key for key in table.keys if labels.get(key) is not None]
    if len(keys) < 2:
        return 0.0
    sub = EmbeddingTable(dim=table.dim)
    for key in keys:
        sub.insert(key, lookup(table, key))

    fractions = []
    for key in keys:
        neighbors = [n for n, _ in knn(sub, lookup(sub, key), k + 1) if n != key][:k]
        same = sum(1 for n in neighbors if labels[n] == labels[key])
        fractions.append(same / len(neighbors))
    return float(np.mean(fractions))
