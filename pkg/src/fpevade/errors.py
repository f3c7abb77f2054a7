"""Exception types shared across the package."""


class FormatError(ValueError):
    """Input file is not in a supported format (bad magic, codec, bit depth)."""


class ParseError(FormatError):
    """Input file is malformed or truncated."""


class ConfigMismatchError(ValueError):
    """Fingerprints built with different front-end or peak settings were mixed."""
