"""Exception types. Each carries a short ``category`` used by the CLI exit line."""


class AtasError(Exception):
    category = "error"


class ShapeError(AtasError, ValueError):
    category = "dimension"


class ParameterError(AtasError, ValueError):
    category = "parameter"


class DegenerateInputError(AtasError, ValueError):
    category = "degenerate-input"


class ContractError(AtasError, RuntimeError):
    category = "contract"


class ConfigError(AtasError, ValueError):
    category = "config"


class GenerationError(AtasError, RuntimeError):
    category = "generation"


class MetricUndefinedError(AtasError, ValueError):
    category = "metric-undefined"


class DivergenceError(AtasError, RuntimeError):
    category = "divergence"

    def __init__(self, message, loss_trace=()):
        super().__init__(message)
        self.loss_trace = list(loss_trace)


class NonFiniteLossError(AtasError, FloatingPointError):
    category = "non-finite-loss"

    def __init__(self, message, step=None, batch_seed=None):
        super().__init__(message)
        self.step = step
        self.batch_seed = batch_seed


class CheckpointError(AtasError, IOError):
    category = "checkpoint"
