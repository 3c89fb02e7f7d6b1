"""Exception types shared across the toolkit."""


class OssError(Exception):
    """Base class for toolkit errors."""


class InfeasibleProblem(OssError):
    """No plant equilibrium satisfies the program's constraints."""


class NonuniqueOptimizer(OssError):
    """Two KKT-consistent optima differ by more than the resolution tolerance."""


class NotStabilizable(OssError):
    """A stabilizability precondition failed."""


class RiccatiFailure(OssError):
    """The Riccati solve produced no valid stabilizing solution."""


class NumericsDisagreement(OssError):
    """Two routes to the same verdict disagree beyond tolerance (numerics bug)."""
