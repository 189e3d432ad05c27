"""Numerical reconstruction of a conductivity from its Dirichlet-to-Neumann map.

Modules: ``sphere`` (harmonic basis), ``forward`` (DtN solvers), ``probe``
(boundary recovery), ``transfer`` (extension and DtN transfer), ``faddeev``
(kernels and layer operators), ``cgo`` (traces and scattering transform),
``recon`` (Fourier inversion and the nonlinear Dirichlet solve), ``pipeline``
and ``cli``.
"""

__version__ = "0.1.0"
