"""Periodic-orbit machinery for 1-periodic Tonelli Lagrangians on flat tori.

Library layout:

  lagrangian   families, class certificates, Legendre duality, modifications
  flow         Euler-Lagrange and linearized Hamiltonian integration
  segment      short action minimizers and their uniqueness radii
  broken       the broken loop space, discrete action, critical points
  index        Conley-Zehnder-Long index pairs and iteration profiles
  homotopy     shortening retraction and pulled-iterate homotopies
  orbits       registry of geometrically distinct orbits
  search       campaign driver; cli is the command-line front door
"""

__version__ = "0.1.0"
