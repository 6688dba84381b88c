"""Reverse k-nearest-neighbour queries over passenger transitions, and
distance-bounded route planning on top of them."""

from .geometry import GeoPoint, Mbr, HalfPlane
from .model import QueryRoute, RknntResult, Route, Semantics, Transition, TransitionPointRef
from .index import RrTree, TrTree, build_rr_tree, build_tr_tree
from .query import rknnt, rknnt_divide_conquer
from .planner import Objective, TransitGraph, build_graph, plan, precompute

__version__ = "0.1.0"
