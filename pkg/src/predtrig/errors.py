"""Exception hierarchy shared by all simulator modules."""


class PredtrigError(Exception):
    """Base class for simulator errors."""


class ConfigurationError(PredtrigError, ValueError):
    """Invalid model, network or scenario parameters."""


class SynthesisError(PredtrigError):
    """Controller synthesis did not converge."""


class SequencingError(PredtrigError):
    """An estimator received an observation for the wrong round."""


class ContractViolation(PredtrigError):
    """A runtime invariant between modules was broken."""
