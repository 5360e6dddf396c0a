"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or out-of-range input data."""


class ParseError(InputError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(ValueError):
    """Invalid configuration or incompatible components."""


class UsageError(RuntimeError):
    """An API was called in an order it does not support."""


class NumericError(ArithmeticError):
    def __init__(self, message, layer=None):
        self.layer = layer
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)
