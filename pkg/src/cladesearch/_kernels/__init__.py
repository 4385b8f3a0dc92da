"""Backend dispatch for the evaluation kernels.

The compiled extension is preferred when importable; the NumPy fallback is
always available.  Set CLADESEARCH_FORCE_FALLBACK=1 to skip the extension
(useful for parity debugging and benchmarking).
"""

import os

from . import fallback

compiled = None
if os.environ.get("CLADESEARCH_FORCE_FALLBACK", "0") not in ("1", "true", "yes"):
    try:
        from . import _speedups as compiled
    except ImportError:
        compiled = None

active = compiled if compiled is not None else fallback
BACKEND = "compiled" if compiled is not None else "fallback"

run_program = active.run_program
run_program_batch = active.run_program_batch
tsp_construct = active.tsp_construct
kp_construct = active.kp_construct
bpp_construct = active.bpp_construct

__all__ = [
    "BACKEND",
    "active",
    "compiled",
    "fallback",
    "run_program",
    "run_program_batch",
    "tsp_construct",
    "kp_construct",
    "bpp_construct",
]
