"""Hierarchical indoor navigation over osmAG area graphs with reactive halting."""

from haltnav.geometry import Point
from haltnav.osmag import Area, AreaGraph, Passage, load_map, parse_map, serialize_map, validate
from haltnav.passage_graph import NoRoute, PassageGraph, Route, build_passage_graph

__all__ = [
    "Area",
    "AreaGraph",
    "NoRoute",
    "Passage",
    "PassageGraph",
    "Point",
    "Route",
    "build_passage_graph",
    "load_map",
    "parse_map",
    "serialize_map",
    "validate",
]

__version__ = "0.1.0"
