"""Structure-preserving physics-informed networks, from scratch on numpy.

Two workflows share one autodiff core: an Allen-Cahn solver trained with
an energy-dissipation penalty and checked against an implicit
finite-difference scheme, and a Lyapunov-projected dynamics classifier
evaluated under gradient-based input attacks.
"""

__version__ = "0.1.0"
