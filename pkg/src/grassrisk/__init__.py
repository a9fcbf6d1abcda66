"""Statistical risk of PCA viewed as M-estimation on the Grassmann manifold.

Submodules: ``grassmann`` (manifold primitives), ``rayleigh`` (block Rayleigh
quotient and its self-concordance), ``risk`` (PCA risk and projector
distances), ``moments`` (fourth-moment tensors, limit laws, bands, variance
parameters, finite-sample threshold), ``models`` (samplers and data I/O),
``montecarlo`` (simulation harness and verification suites), ``cli``.
"""

__version__ = "0.1.0"
