"""Gradient-leakage toolkit: lattice attacks on shared first-layer gradients.

The package has three layers:

* exact integer/lattice algebra (:mod:`gradleak.intmat`, :mod:`gradleak.lattice`),
* hidden-subset-sum instances and attacks (:mod:`gradleak.hssp`),
* a federated-learning gradient simulator plus experiment pipeline
  (:mod:`gradleak.flsim`, :mod:`gradleak.pipeline`, ``gradleak`` CLI).
"""

__version__ = "0.1.0"
