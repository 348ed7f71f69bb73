class UserFacingException(Exception):
    """Wraps an exception to denote it as user-facing.

    It will be unwrapped by the CLI.
    """

    def __init__(self, original_exception: Exception):
        super().__init__()
        self.original_exception = original_exception


class StageError(UserFacingException):
    """A user-facing failure tagged with the pipeline stage that raised it."""

    def __init__(self, stage: str, original_exception: Exception):
        super().__init__(original_exception)
        self.stage = stage

    def __str__(self) -> str:
        return f"{self.stage}: {self.original_exception}"
