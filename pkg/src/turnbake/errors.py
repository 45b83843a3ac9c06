"""Exception hierarchy. InputError maps to CLI exit 1, ProviderError to exit 2."""


class TurnbakeError(Exception):
    pass


class InputError(TurnbakeError):
    """Invalid user input: bad files, bad geometry, inconsistent parameters."""


class MeshFormatError(InputError):
    """Unreadable or malformed mesh file."""


class DegenerateMeshError(InputError):
    """Mesh has no usable extent (all vertices coincident, zero faces, ...)."""


class MissingUVsError(InputError):
    """Operation requires a UV parameterization the mesh does not carry."""


class ProviderError(TurnbakeError):
    """Appearance-provider failure: transport, timeout, or bad response."""


class ProviderTimeout(ProviderError):
    pass


class MalformedResponseError(ProviderError):
    """Response frames missing or inconsistent with the request."""


class GeometryMismatchError(ProviderError):
    """Oracle provider geometry disagrees with the conditioning frames."""


class RemoteJobError(ProviderError):
    """Remote service reported job failure."""
