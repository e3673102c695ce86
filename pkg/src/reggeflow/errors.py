"""Exception hierarchy shared by all reggeflow modules."""


class ReggeFlowError(Exception):
    """Base class for every error raised by this package."""


class DegenerateSimplex(ReggeFlowError):
    pass


class DuplicateTetrahedron(ReggeFlowError):
    pass


class NotCompact(ReggeFlowError):
    """Operation needs a closed complex (every triangle shared by two tetrahedra)."""


class MissingEdgeLength(ReggeFlowError):
    pass


class NonRealizable(ReggeFlowError):
    """Squared lengths do not describe a Euclidean simplex of positive volume."""


class NonRealizableTetrahedron(NonRealizable):
    def __init__(self, message, tetrahedra=()):
        super().__init__(message)
        self.tetrahedra = tuple(tetrahedra)


class DegenerateFace(NonRealizable):
    pass


class ZeroDualArea(ReggeFlowError):
    pass


class ZeroWeightSum(ReggeFlowError):
    pass


class MatrixSingular(ReggeFlowError):
    pass


class StepTooSmall(ReggeFlowError):
    pass


class CollapseExceeded(ReggeFlowError):
    """Closed-form model evaluated past its extinction time."""


class MeshFormatError(ReggeFlowError):
    pass
