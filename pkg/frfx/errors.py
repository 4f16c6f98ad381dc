"""Exception hierarchy. Every error raised on purpose by frfx derives from FrfxError."""


class FrfxError(Exception):
    pass


# fda_core
class InvalidBasisConfig(FrfxError, ValueError):
    pass


class SingularFit(FrfxError, ValueError):
    pass


class RankError(FrfxError, ValueError):
    pass


class GridMismatch(FrfxError, ValueError):
    pass


class NonpositiveWeight(FrfxError, ValueError):
    pass


class DegenerateModel(FrfxError, ValueError):
    pass


class InvalidGrid(FrfxError, ValueError):
    pass


class InvalidDataset(FrfxError, ValueError):
    pass


# frf
class EmptyNode(FrfxError, ValueError):
    pass


class SingleClassData(FrfxError, ValueError):
    pass


class NoBootstrapInfo(FrfxError, ValueError):
    pass


# explain
class EmptyData(FrfxError, ValueError):
    pass


class DegenerateScores(FrfxError, ValueError):
    pass


class DegenerateGroups(FrfxError, ValueError):
    pass


# cli_io
class RaggedRows(FrfxError, ValueError):
    def __init__(self, path: str, row: int, expected: int, got: int):
        super().__init__(f"{path}: row {row} has {got} values, expected {expected}")
        self.row = row


class UnparseableField(FrfxError, ValueError):
    def __init__(self, path: str, row: int, column: int, text: str):
        super().__init__(f"{path}: cannot parse {text!r} at row {row}, column {column}")
        self.row = row
        self.column = column


class UnknownLabelArity(FrfxError, ValueError):
    pass


class SchemaVersionMismatch(FrfxError, ValueError):
    pass


class CorruptModel(FrfxError, ValueError):
    pass


class IoError(FrfxError, OSError):
    pass


class InvalidSpec(FrfxError, ValueError):
    pass
