"""
Exceptional Nexus Toolkit
Spectra, exceptional arcs, Berry phases, dissipative dynamics and fits for a
three-state non-Hermitian model.
"""

__version__ = "0.1.0"
