"""Exception types shared across the package."""


class FormatError(ValueError):
    """A dataset or model file does not match its binary layout."""

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ContractError(ValueError):
    """An input violates a precondition that the caller was required to establish."""
