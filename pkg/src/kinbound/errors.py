"""Exception hierarchy. Each error maps onto a CLI exit code."""


class KinboundError(Exception):
    exit_code = 1


class InfeasibleConfig(KinboundError):
    """Inputs are well formed but no certificate can be built from them."""
    exit_code = 2


class ConfigError(KinboundError):
    exit_code = 1


class NonIntegrableAngular(KinboundError):
    pass


class QuadratureFailure(KinboundError):
    pass


class NonPositiveInfimum(InfeasibleConfig):
    pass


class InvalidEps(KinboundError):
    pass


class MissingLpBound(InfeasibleConfig):
    pass


class MissingWBound(InfeasibleConfig):
    pass


class InvalidGeometry(KinboundError):
    pass


class InsufficientSamples(KinboundError):
    pass


class EmptyIntegrationDomain(KinboundError):
    pass


class DegenerateSample(InfeasibleConfig):
    pass


class InvalidBounds(InfeasibleConfig):
    pass


class NoAdmissibleEps(InfeasibleConfig):
    pass


class DegenerateEnvelope(InfeasibleConfig):
    pass


class InvalidSchedule(InfeasibleConfig):
    pass


class InvalidKappa(InfeasibleConfig):
    pass


class InvalidS(KinboundError):
    pass


class UnstableStep(KinboundError):
    pass


class NonContraction(KinboundError):
    """A traced height fell below the claimed doubly exponential envelope."""
    pass
