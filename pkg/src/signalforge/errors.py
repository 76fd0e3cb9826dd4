"""Exception types shared across the package."""


class SignalForgeError(Exception):
    """Base class for all package errors."""


# -- panel / market data -----------------------------------------------------

class MissingFieldError(SignalForgeError):
    def __init__(self, field, where=""):
        self.field = field
        super().__init__(f"missing required field {field!r}" + (f" in {where}" if where else ""))


class ShapeMismatchError(SignalForgeError):
    pass


class InvariantViolationError(SignalForgeError):
    def __init__(self, field, date, symbol, detail):
        self.field = field
        self.date = date
        self.symbol = symbol
        super().__init__(f"panel invariant violated: field={field} date={date} symbol={symbol}: {detail}")


class EmptyPanelError(SignalForgeError):
    pass


class BadParamsError(SignalForgeError):
    pass


class HorizonTooLargeError(SignalForgeError):
    pass


# -- DSL ----------------------------------------------------------------------

class DslError(SignalForgeError):
    pass


class DslSyntaxError(DslError):
    """Malformed signal text. Carries the character offset and the token set
    that would have been accepted there."""

    def __init__(self, position, expected, found):
        self.position = position
        self.expected = tuple(sorted(expected))
        self.found = found
        super().__init__(
            f"syntax error at offset {position}: expected one of "
            f"{', '.join(self.expected)}; found {found!r}"
        )


class UnknownFieldError(DslError):
    def __init__(self, name, detail=""):
        self.name = name
        super().__init__(f"unknown field {name!r}" + (f": {detail}" if detail else ""))


class InputsMismatchError(DslError):
    def __init__(self, declared, used):
        self.declared = frozenset(declared)
        self.used = frozenset(used)
        super().__init__(
            f"declared inputs {sorted(declared)} do not match fields used by the "
            f"expression {sorted(used)}"
        )


class WindowTooSmallError(DslError):
    def __init__(self, declared, required):
        self.declared = declared
        self.required = required
        super().__init__(f"declared window {declared} < required lookback {required}")


class ArityError(DslError):
    def __init__(self, func, expected, got, position):
        self.func = func
        self.position = position
        super().__init__(f"{func} takes {expected} argument(s), got {got} (at offset {position})")


class MissingInputError(SignalForgeError):
    pass


class PanelTooShortError(SignalForgeError):
    pass


# -- metrics ------------------------------------------------------------------

class NoUsableDatesError(SignalForgeError):
    pass


class ZeroVolatilityError(SignalForgeError):
    pass


# -- knowledge base -----------------------------------------------------------

class UnembeddableError(SignalForgeError):
    pass


# -- remote backend -----------------------------------------------------------

class BackendError(SignalForgeError):
    pass


class BackendTimeoutError(BackendError):
    pass


class HttpStatusError(BackendError):
    def __init__(self, status, body=""):
        self.status = status
        super().__init__(f"backend returned HTTP {status}: {body[:200]}")


class MalformedCompletionError(BackendError):
    """Completion arrived but carries no usable payload (no signal block /
    no score line). The loop degrades this to score 0 instead of aborting."""


class BackendFailureError(BackendError):
    """Transport-level failure that persisted through all retries."""


# -- loops / reports ----------------------------------------------------------

class InsufficientDataError(SignalForgeError):
    pass


# -- regret lab ---------------------------------------------------------------

class NotSuccessiveError(SignalForgeError):
    pass


class EmptyTraceError(SignalForgeError):
    pass
