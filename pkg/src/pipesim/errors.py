class ConfigurationError(ValueError):
    """Invalid model, hardware, policy or workload parameters."""


class ValidationError(ValueError):
    """A domain invariant does not hold (bad lengths, duplicate ids)."""


class TraceParseError(ValueError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no
