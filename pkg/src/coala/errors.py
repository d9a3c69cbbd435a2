"""Exception hierarchy shared across the kernel.

Errors that an agent is expected to recover from inside a decision cycle
(unknown environment actions, for instance) are not exceptions at all; they
come back as observations. Everything here signals a contract violation or
a failure the caller has to handle.
"""

from __future__ import annotations


class CoalaError(Exception):
    """Base class for every error raised by this package."""


# rewrite engine


class StepLimitExceeded(CoalaError):
    def __init__(self, max_steps: int, last: str):
        super().__init__(f"no terminal rule fired within {max_steps} steps")
        self.max_steps = max_steps
        self.last = last


class UnboundVariable(CoalaError, KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"unbound state variable: {self.name!r}"


# language-model interface


class MissingBinding(CoalaError, KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"no binding for placeholder {{{self.name}}}"


class NoCompletion(CoalaError):
    """The scripted table has no entry for a prompt and no fallback."""


class BackendUnavailable(CoalaError):
    """Transport failure or non-200 reply from a remote backend."""


class CapabilityError(CoalaError):
    """The backend lacks a capability the caller needs (e.g. scoring)."""


class UnknownContinuation(CoalaError):
    pass


class ParseError(CoalaError, ValueError):
    def __init__(self, message: str, text: str):
        super().__init__(f"{message}: {text!r}")
        self.text = text


class ChainStepError(CoalaError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"chain step {index} failed: {cause}")
        self.index = index
        self.cause = cause


# memory


class TimestampRegression(CoalaError, ValueError):
    pass


class DanglingSource(CoalaError, KeyError):
    def __init__(self, source_id: int):
        super().__init__(source_id)
        self.source_id = source_id

    def __str__(self) -> str:
        return f"source episode {self.source_id} does not exist"


class UnknownProcedure(CoalaError, KeyError):
    pass


class UnknownRecord(CoalaError, KeyError):
    pass


class MemoryPermissionError(CoalaError, PermissionError):
    """A guarded memory write (procedural update, unlearning) was refused."""


class FormatError(CoalaError, ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


# retrieval


class NegativeElapsed(CoalaError, ValueError):
    pass


class DimensionMismatch(CoalaError, ValueError):
    pass


class ZeroVector(CoalaError, ValueError):
    pass


class EmptyQuery(CoalaError, ValueError):
    pass


# grounding


class EpisodeFinished(CoalaError):
    """step() was called on an environment whose episode is already done."""


class ToolError(CoalaError):
    pass


# decision


class NoCandidates(CoalaError):
    pass


class BudgetExhausted(CoalaError):
    """Search stopped because its expansion budget ran out."""


class NoSolution(CoalaError):
    """Search space exhausted without reaching a successful terminal state."""


class PolicyError(CoalaError, ValueError):
    pass


# agents / cli


class ValidationError(CoalaError, ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class HashMismatch(CoalaError):
    pass
