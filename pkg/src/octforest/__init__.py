"""Distributed forest-of-octrees meshes with an in-process rank harness."""

from .connectivity import Connectivity, build_brick, build_unitcube
from .forest import Forest, balance, coarsen, new_uniform, partition_even, refine
from .ghost import GhostLayer, build_ghost, exchange_ghost_data
from .iterate import CLOSED, OPEN, iterate
from .lnodes import LNodes, lnodes
from .octant import ContractError, Octant
from .search import search, split_array
from .transport import RankGroup, run

__version__ = "0.1.0"

__all__ = [
    "CLOSED", "OPEN", "Connectivity", "ContractError", "Forest", "GhostLayer", "LNodes",
    "Octant", "RankGroup", "balance", "build_brick", "build_ghost", "build_unitcube",
    "coarsen", "exchange_ghost_data", "iterate", "lnodes", "new_uniform", "partition_even",
    "refine", "run", "search", "split_array",
]
