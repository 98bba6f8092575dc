"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed data: wrong shapes, resolutions, empty inputs."""


class UsageError(ValueError):
    """A valid object used with an operation that does not support it."""


class ConfigError(ValueError):
    """Bad experiment configuration. ``key`` names the offending entry."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")
