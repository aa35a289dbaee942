class HaSimError(Exception):
    """Base class for every error raised by ha_sim."""


class ValidationError(HaSimError, ValueError):
    pass


class ScenarioError(ValidationError):
    """A scenario file or schedule step cannot be used."""


class DuplicateNameError(HaSimError):
    pass


class UnknownObjectError(HaSimError, LookupError):
    def __init__(self, kind: str, name: str):
        super().__init__(f"Unknown {kind}: {name!r}")
        self.kind = kind
        self.name = name


class NoEndpointError(HaSimError):
    def __init__(self, service: str):
        super().__init__(f"Service {service!r} has no endpoints")
        self.service = service


class ServiceUnavailableError(NoEndpointError):
    pass


class EngineFinishedError(HaSimError):
    pass


class MetricsError(HaSimError):
    pass


class ReportError(HaSimError):
    pass
