"""Exception hierarchy shared by all modules."""


class AdiabaticError(Exception):
    """Base class for all library errors."""


class InvalidWavefunction(AdiabaticError, ValueError):
    """Amplitude vector is not normalized or has dimension < 2."""


class InvalidPopulations(AdiabaticError, ValueError):
    """Chart populations fall outside the simplex."""


class PivotDegenerate(AdiabaticError):
    """Population on the requested pivot is too small for a well-conditioned chart."""


class InvalidHamiltonian(AdiabaticError, ValueError):
    """Matrix generator is not Hermitian or disagrees with its analytic classical form."""


class DerivativeUnstable(AdiabaticError):
    """Richardson levels of a finite difference disagree beyond tolerance."""


class DegenerateSpectrum(AdiabaticError):
    """Eigenvalue gap below the degeneracy floor; the hierarchy is undefined there."""


class BranchJump(AdiabaticError):
    """Tracked fixed point moved discontinuously between neighbouring parameter values."""


class GradeOverflow(AdiabaticError, ValueError):
    """Requested order exceeds the configured maximum."""


class OrbitNotClosed(AdiabaticError):
    """Closure gap of a sampled cycle exceeds tolerance."""


class NormDrift(AdiabaticError):
    """Norm drift in a single step exceeded the allowed bound."""


class StepUnderflow(AdiabaticError):
    """Adaptive step size fell below the minimum."""


class ChartSingularity(AdiabaticError):
    """Classical trajectory reached a coordinate singularity of every usable chart."""
