"""Exception hierarchy shared by all unloadlab modules.

Every error that a pipeline stage can raise is a distinct class so the CLI
can map it to a distinct exit code.
"""


class UnloadLabError(Exception):
    """Base class for all package errors."""


# --- mesh I/O and topology ---------------------------------------------------

class ParseError(UnloadLabError):
    """Malformed mesh file."""


class TopologyError(UnloadLabError):
    """Inverted tetrahedron, dangling node index, or similar defect."""


class IoError(UnloadLabError):
    """Filesystem failure while reading or writing an artifact."""


class MissingLabel(UnloadLabError):
    """A required surface label (ENDO/EPI/BASE) is absent."""


class AmbiguousTopology(UnloadLabError):
    """Boundary does not decompose into two shells plus a basal rim."""


class DegenerateMesh(UnloadLabError):
    """All nodes coincide; normalization scale would be zero."""


# --- fields and material ------------------------------------------------------

class SolverError(UnloadLabError):
    """A linear system could not be solved to tolerance."""


class DegenerateGradient(UnloadLabError):
    """Transmural gradient vanishes inside an element."""


class PoleDegeneracy(UnloadLabError):
    """Circumferential direction undefined and no processed neighbor to copy."""


class InvertedElement(UnloadLabError):
    """Deformation gradient with non-positive determinant."""


class Overflow(UnloadLabError):
    """Strain exponent exceeded the safe range; state is non-physical."""


class NonConvergence(UnloadLabError):
    """Newton or fixed-point iteration exhausted its budget."""


# --- data generation ----------------------------------------------------------

class ResolutionError(UnloadLabError):
    """Generated mesh falls outside the requested node/element band."""


class MissingModeFile(UnloadLabError):
    """PCA shape sampling requested without a mode file."""


class TooFewShapes(UnloadLabError):
    """Shape-level split needs at least two shapes."""


class ValueNotInGrid(UnloadLabError):
    """Held-out parameter value does not occur in the grid."""


# --- autodiff and network -----------------------------------------------------

class ShapeMismatch(UnloadLabError):
    """Operands have incompatible shapes."""


class NotScalar(UnloadLabError):
    """backward() requires a scalar loss."""


class IsolatedNode(UnloadLabError):
    """Graph node with an empty neighborhood."""


class NonFiniteActivation(UnloadLabError):
    """NaN or Inf appeared in a network activation."""


class NonFiniteGradient(UnloadLabError):
    """NaN or Inf appeared in a parameter gradient."""


class EmptySplit(UnloadLabError):
    """Training requires nonempty train and test sides."""


# --- evaluation ----------------------------------------------------------------

class CorrespondenceMismatch(UnloadLabError):
    """Predicted and reference meshes do not share connectivity."""


class InsufficientData(UnloadLabError):
    """Fewer training cases than requested PCA modes."""


class EmptyTestSet(UnloadLabError):
    """Evaluation requires at least one test case."""


class UnknownVariant(UnloadLabError):
    """Ablation variant id not recognized or duplicated."""
