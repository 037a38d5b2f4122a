"""Handwriting-to-machine-print translation with sliced-Wasserstein critics.

Submodules: ``ot`` (transport distances), ``swd`` (orthogonal-projection
critic blocks), ``networks``, ``losses``, ``training``, ``data``,
``metrics``, ``checkpoint``, ``config`` and ``cli``.
"""

__version__ = "0.1.0"
