class PrivBcastError(Exception):
    """Base class for every error raised by the broadcast library"""


class ConfigError(PrivBcastError):
    """Invalid experiment configuration; `field` names the offending entry"""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


# dcnet
class OversizeMessage(PrivBcastError):
    pass


class MissingShare(PrivBcastError):
    pass


# groups
class NetworkTooSmall(PrivBcastError):
    pass


class WrongSize(PrivBcastError):
    pass


class NotAMember(PrivBcastError):
    pass


# diffusion
class NoEligibleNeighbor(PrivBcastError):
    pass


# protocol
class UnknownKind(PrivBcastError):
    pass


# simnet
class InfeasibleSpec(PrivBcastError):
    pass


class NonTermination(PrivBcastError):
    """Event cap exceeded; carries the diagnostic counters of the aborted run"""

    def __init__(self, events: int, now: int, pending: int):
        super().__init__(
            f"simulation aborted after {events} events at tick {now} "
            f"({pending} events still queued)"
        )
        self.events = events
        self.now = now
        self.pending = pending


# adversary
class AllCorrupt(PrivBcastError):
    pass
