"""Exception types shared across the package."""


class ConfigError(Exception):
    """Invalid network/scenario configuration. CLI maps this to exit code 2."""


class ContractError(ValueError):
    """A caller violated an API precondition (bad argument, uncovered element)."""


class DegenerateRouteRequest(ContractError):
    """Route requested with identical start and destination nodes."""
