"""Exception types shared across the package."""


class InvalidInput(ValueError):
    """An argument violates an operation's precondition."""


class FatalConfig(RuntimeError):
    """Required configuration or input file is missing or unusable."""


class EmptyScene(RuntimeError):
    """A scene directory yielded zero loadable frames."""


class ObjectNotVisible(RuntimeError):
    """An object proposal selects no patch in the given frame."""
