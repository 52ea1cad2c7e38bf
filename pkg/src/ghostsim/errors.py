"""Exception types raised across the package."""


class SecurityError(Exception):
    """Base class for frames rejected by the MAC security layer."""


class ReplayRejected(SecurityError):
    """Incoming frame counter is not larger than the stored one."""


class IntegrityFailure(SecurityError):
    """MIC mismatch after full decryption."""


class UnknownSource(SecurityError):
    """No ACL entry for the frame's source address."""


class BlacklistedSource(SecurityError):
    """Source is blacklisted; frame dropped before decryption."""


class CounterExhausted(SecurityError):
    """Sender frame counter would wrap."""


class FrameFormatError(ValueError):
    """Bytes do not decode to a well-formed frame."""


class UnsupportedLevel(ValueError):
    pass


class NonPositiveCost(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class InvalidScenario(ValueError):
    """Scenario fails validation; ``reason`` says why."""

    def __init__(self, reason, line=None):
        self.reason = reason
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{reason}{where}")


class ValidationError(InvalidScenario):
    pass


class ParseError(InvalidScenario):
    pass


class DisconnectedNode(InvalidScenario):
    def __init__(self, unreachable):
        self.unreachable = sorted(unreachable)
        super().__init__(f"nodes cannot reach the gateway: {self.unreachable}")


class NoConvergence(RuntimeError):
    def __init__(self, iterations, residual):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"no convergence after {iterations} iterations (residual {residual:.3e})")


class EmptyGroup(ValueError):
    pass


class SessionAlreadyPending(RuntimeError):
    pass


class SessionExpired(RuntimeError):
    pass


class MismatchedScenarios(ValueError):
    pass
