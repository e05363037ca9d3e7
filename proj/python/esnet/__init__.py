"""Element-knowledge crystal property prediction.

Thin wrappers over the C++ core. Structures are dicts with ``lattice``
(3x3, rows are lattice vectors in Angstrom), ``frac_coords`` and ``species``.
"""

import json
from importlib import resources

from . import _esnet
from ._esnet import DataError, ElementTable, Error, NumericError, UsageError

__all__ = [
    "DataError",
    "ElementTable",
    "Error",
    "NumericError",
    "UsageError",
    "brute_force_neighbors",
    "build_graph",
    "build_triples",
    "composition_embedding",
    "default_element_table",
    "encode_atom",
    "load_element_table",
    "neighbor_search",
    "predict",
    "read_embeddings",
    "run_pipeline",
]


def default_element_table_path() -> str:
    return str(resources.files(__package__) / "elements.tsv")


def load_element_table(path=None) -> ElementTable:
    return _esnet.load_element_table(str(path or default_element_table_path()))


_default_table = None


def default_element_table() -> ElementTable:
    global _default_table
    if _default_table is None:
        _default_table = load_element_table()
    return _default_table


def _structure(s):
    s = dict(s)
    s.setdefault("id", "structure")
    for key in ("lattice", "frac_coords"):
        s[key] = [list(map(float, row)) for row in s[key]]
    return json.dumps(s)


def build_triples(table=None, bins=10):
    return _esnet.build_triples(table or default_element_table(), bins)


def composition_embedding(composition, tokens, vectors):
    """composition: mapping or (symbol, count) pairs."""
    if hasattr(composition, "items"):
        composition = list(composition.items())
    return _esnet.composition_embedding([(s, float(c)) for s, c in composition], list(tokens), vectors)


def read_embeddings(path):
    return _esnet.read_embeddings(str(path))


def encode_atom(symbol, table=None):
    return _esnet.encode_atom(symbol, table or default_element_table())


def neighbor_search(structure, cutoff, min_neighbors=0):
    return _esnet.neighbor_search(_structure(structure), cutoff, min_neighbors)


def brute_force_neighbors(structure, cutoff):
    return _esnet.brute_force_neighbors(_structure(structure), cutoff)


def build_graph(structure, table=None, **featurizer):
    return _esnet.build_graph(_structure(structure), table or default_element_table(), json.dumps(featurizer))


def run_pipeline(config=None, stages=(), seed=None, out=None, task=None, no_kg_encoder=False):
    """Run pipeline stages ("kg-build", ..., "predict"); all default stages when empty."""
    return _esnet.run_pipeline(
        str(config or ""), list(stages), seed, None if out is None else str(out), task, no_kg_encoder,
        default_element_table_path(),
    )


def predict(checkpoint, structure, embeddings, table=None):
    return _esnet.predict(str(checkpoint), _structure(structure), table or default_element_table(), str(embeddings))
