"""Exception types shared across the package."""


class NSDDEError(Exception):
    """Base class; ``code`` is used in the CLI's error JSON."""

    code = "error"


class ShapeError(NSDDEError, ValueError):
    code = "input_shape"


class StaleCacheError(NSDDEError):
    code = "stale_cache"


class LabelError(NSDDEError, ValueError):
    code = "label"


class DivergenceError(NSDDEError, ArithmeticError):
    code = "divergence"


class GridError(NSDDEError, ValueError):
    code = "step_exceeds_delay"


class EmptyInputError(NSDDEError, ValueError):
    code = "empty_input"


class ParseError(NSDDEError, ValueError):
    code = "parse"

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class IntegrityError(NSDDEError, ValueError):
    code = "integrity"


class StratificationError(NSDDEError, ValueError):
    code = "stratification"


class DegenerateLabelsError(NSDDEError, ValueError):
    code = "degenerate_labels"


class EmptyEvaluationError(NSDDEError, ValueError):
    code = "empty_evaluation"


class ConfigError(NSDDEError, ValueError):
    code = "config"


class GeneratorError(NSDDEError, ArithmeticError):
    code = "generator"
