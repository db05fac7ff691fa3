"""JSON formats for tree models, tree topologies and CDF grids."""

import json
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, FiniteFloat, model_validator

from .exceptions import GridError
from .models import build_tree


class NodeSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: int
    p: FiniteFloat


class EdgeSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    parent: int
    child: int
    p11: FiniteFloat


class TreeSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    root: int
    nodes: list[NodeSchema]
    edges: list[EdgeSchema] = []
    ordering: Optional[dict[str, list[int]]] = None


class TopologyNodeSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: int
    p: Optional[FiniteFloat] = None


class TopologyEdgeSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    parent: int
    child: int
    p11: Optional[FiniteFloat] = None


class TopologySchema(BaseModel):
    """A tree file whose probabilities, if present, are ignored."""

    model_config = ConfigDict(extra="forbid")

    root: int
    nodes: list[TopologyNodeSchema]
    edges: list[TopologyEdgeSchema] = []
    ordering: Optional[dict[str, list[int]]] = None


class GeneralModelSchema(BaseModel):
    """Nodes and pairwise joints on an arbitrary graph; a tree file also parses."""

    model_config = ConfigDict(extra="forbid")

    root: Optional[int] = None
    nodes: list[NodeSchema]
    edges: list[EdgeSchema] = []
    ordering: Optional[dict[str, list[int]]] = None


class GridSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    x: list[FiniteFloat]
    marginals: dict[str, list[FiniteFloat]]
    bivariates: Optional[dict[str, list[FiniteFloat]]] = None
    copula: Optional[Literal["independence", "comonotone", "anti-comonotone"]] = None

    @model_validator(mode="after")
    def check_shape(self):
        if (self.bivariates is None) == (self.copula is None):
            raise ValueError("exactly one of 'bivariates' or 'copula' must be given")
        length = len(self.x)
        for key, values in {**self.marginals, **(self.bivariates or {})}.items():
            if len(values) != length:
                raise ValueError(f"series {key!r} has {len(values)} values, expected {length}")
        return self


class GaussianSchema(BaseModel):
    """Gaussian marginals, one mean per node in id order."""

    model_config = ConfigDict(extra="forbid")

    means: list[FiniteFloat]
    sigmas: Optional[list[FiniteFloat]] = None

    @model_validator(mode="after")
    def check_sigmas(self):
        if self.sigmas is not None:
            if len(self.sigmas) != len(self.means):
                raise ValueError("sigmas and means must have the same length")
            if min(self.sigmas) <= 0:
                raise ValueError("sigmas must be positive")
        return self


def read_json(path):
    with open(path, "r") as f:
        return json.load(f)


def tree_from_document(document, validate=True):
    doc = TreeSchema.model_validate(document)
    return build_tree(
        [(node.id, node.p) for node in doc.nodes],
        [(edge.parent, edge.child, edge.p11) for edge in doc.edges],
        root=doc.root,
        ordering=doc.ordering,
        validate=validate,
    )


def load_tree(path, validate=True):
    return tree_from_document(read_json(path), validate=validate)


def dump_tree(tree, path):
    with open(path, "w") as f:
        json.dump(tree.to_dict(), f, indent=2)


def load_topology(path):
    """A TreeModel carrying only structure (all probabilities set to zero)."""
    doc = TopologySchema.model_validate(read_json(path))
    return build_tree(
        [(node.id, 0.0) for node in doc.nodes],
        [(edge.parent, edge.child, 0.0) for edge in doc.edges],
        root=doc.root,
        ordering=doc.ordering,
    )


def parse_edge_key(key):
    try:
        a, b = key.split("-")
        return int(a), int(b)
    except ValueError:
        raise GridError(f"edge key {key!r} is not of the form 'i-j'")
