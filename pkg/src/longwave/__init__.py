"""Neural-operator surrogates for long-time wave simulation.

Subpackages: ``random_fields`` (initial data), ``solvers`` (reference
trajectories), ``dataset`` (storage and training windows), ``operators``
(FNO, DeepONet, Geo-FNO), ``training``, ``evaluation`` and ``cli``.
"""

__version__ = "0.1.0"
