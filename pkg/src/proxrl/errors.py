class DomainError(ValueError):
    """Raised when an operation is called outside its valid domain."""


class NonFiniteLossError(FloatingPointError):
    def __init__(self, index: int, message: str = ""):
        self.index = index
        super().__init__(message or f"non-finite loss at batch index {index}")


class CheckpointError(IOError):
    pass
