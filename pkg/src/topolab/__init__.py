"""Topographic CNN training lab.

Shallow CNNs whose fc1 layer lives on an 11x11 grid, trained under local
weight-similarity or activation-similarity penalties, plus the robustness,
compactness and spatial-organization analyses that go with them.
"""

__version__ = "0.1.0"

from topolab.grid import TopoGrid
from topolab.tensor import Tensor, backward, clear_tape, no_grad

__all__ = ["TopoGrid", "Tensor", "backward", "clear_tape", "no_grad", "__version__"]
