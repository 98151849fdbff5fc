"""Exception hierarchy shared by the allocator, the models and the CLI."""


class CompactFitError(Exception):
    """Base class for every error raised by this package."""


class ContractError(CompactFitError):
    """A caller broke an operation's precondition (illegal transition,
    stale handle, double free, ...)."""


class ConfigError(CompactFitError):
    """Invalid heap or model configuration."""


class UnsupportedSize(CompactFitError):
    """Requested object does not fit any size-class."""


class OutOfMemory(CompactFitError):
    """No free page (or no free handle) is available."""


class ResourceError(CompactFitError):
    """A model build exceeded its configured state budget."""

    def __init__(self, message, states_seen=0, transitions_seen=0):
        super().__init__(message)
        self.states_seen = states_seen
        self.transitions_seen = transitions_seen


class TraceError(CompactFitError):
    """Malformed trace or distribution file, or a trace that frees an
    unknown id."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno
