"""eriflow: a compiled electron-repulsion-integral engine and RHF driver.

Pipeline: shell pairs are grouped into class-homogeneous tiles and blocks
(:mod:`eriflow.blocks`), each ERI class is compiled to a straight-line plan
(:mod:`eriflow.compiler`), plans run over blocks to build the Fock matrix
(:mod:`eriflow.executor`) with tunable granularity (:mod:`eriflow.allocator`),
and :mod:`eriflow.scf` closes the self-consistent loop.
"""

from .blocks import BlockPlan, construct
from .boys import boys, boys_array
from .compiler import CompilerConfig, ExecutionPlan, compile_class, emit_source, plan_stats
from .executor import FockContext, build_g
from .molecule import Molecule, load_molecule, parse_xyz
from .scf import ScfOptions, ScfResult, scf_iterate

__version__ = "0.1.0"

__all__ = [
    "BlockPlan", "CompilerConfig", "ExecutionPlan", "FockContext", "Molecule", "ScfOptions", "ScfResult",
    "boys", "boys_array", "build_g", "compile_class", "construct", "emit_source", "load_molecule",
    "parse_xyz", "plan_stats", "scf_iterate",
]
