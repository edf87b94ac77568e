"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so every failure a user can
trigger from the command line should surface as one of them.
"""


class PatchPCCError(Exception):
    """Base class for all package errors."""


class ShapeError(PatchPCCError, ValueError):
    """A tensor reached a layer with the wrong extents."""

    def __init__(self, message, layer_index=None):
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        super().__init__(message)
        self.layer_index = layer_index


class GraphError(PatchPCCError, RuntimeError):
    """Misuse of the autodiff graph (e.g. backward without a forward pass)."""


class CloudParseError(PatchPCCError, ValueError):
    """Malformed point cloud file."""

    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line
        self.path = path


class MalformedStreamError(PatchPCCError, ValueError):
    """A bitstream (octree, latent or container payload) cannot be decoded."""


class ContainerError(MalformedStreamError):
    """Bad magic, unsupported version or inconsistent lengths in a container."""


class FormatMismatchError(PatchPCCError, ValueError):
    """Weights, flags and container header disagree."""
