"""Exception taxonomy shared by the library and the CLI.

Each class carries the process exit code the CLI maps it to:

    UsageError        2   bad arguments, out-of-range queries, missing inputs
    InputFormatError  3   unparseable or unsupported input files
    GeometryError     4   geometric inconsistencies (crossing surfaces, ...)
    TopologyError     4   non-manifold / open meshes, failed topology repair
    CortexForgeError  5   anything else (internal)
"""


class CortexForgeError(Exception):
    exit_code = 5


class UsageError(CortexForgeError):
    exit_code = 2


class InputFormatError(CortexForgeError):
    exit_code = 3


class GeometryError(CortexForgeError):
    exit_code = 4


class TopologyError(GeometryError):
    """Raised for open/non-manifold meshes and unrepairable topology.

    May carry the offending topology report in ``.report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
