"""Exception hierarchy shared by the library and the CLI."""


class MaskFuseError(Exception):
    """Base class for all maskfuse errors."""


class ShapeError(MaskFuseError, ValueError):
    """Two masks (or a mask and an image) disagree on height/width."""


class MalformedRLEError(MaskFuseError, ValueError):
    pass


class ContractError(MaskFuseError, ValueError):
    """A caller broke a precondition, e.g. mixed image ids in one group."""


class ConfigError(MaskFuseError, ValueError):
    pass


class InputError(MaskFuseError, ValueError):
    """Input data references unknown or unpaired ids."""


class ValidationError(MaskFuseError, ValueError):
    """An input file failed parsing or schema checks.

    ``diagnostics`` holds one human-readable line per offending record.
    """

    def __init__(self, message: str, diagnostics: list[str] | None = None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [message])
