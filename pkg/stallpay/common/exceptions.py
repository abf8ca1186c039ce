from django.core.exceptions import PermissionDenied


class EngineError(Exception):
    """
    Base of every precondition failure raised by a contract operation.

    `code` is a stable tag that ends up in the runner's diagnostics.
    """
    code = 'engine_error'

    def __init__(self, message, **params):
        super().__init__(message)
        self.message = message
        self.params = params
        pass

    def __str__(self):
        return '{}: {}'.format(self.code, self.message)

    pass


class InvalidArgument(EngineError):
    code = 'invalid_argument'
    pass


class NotFound(EngineError):
    code = 'not_found'
    pass


class Unauthorized(EngineError, PermissionDenied):
    code = 'unauthorized'
    pass


class Conflict(EngineError):
    code = 'conflict'
    pass


class InvalidState(EngineError):
    code = 'invalid_state'
    pass


class InsufficientFunds(EngineError):
    code = 'insufficient_funds'
    pass


class Overflow(EngineError):
    code = 'overflow'
    pass
