"""Exception hierarchy.

Every error raised on purpose derives from :class:`AbsorbError`. Errors that
describe bad input data derive from :class:`DataError` and map to CLI exit
code 3; configuration problems map to exit code 2.
"""


class AbsorbError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(AbsorbError):
    """Invalid or unreadable configuration."""


class DataError(AbsorbError):
    """Input data violates a schema or a precondition."""


class MissingColumn(DataError):
    def __init__(self, column):
        super().__init__(f"missing required column {column!r}")
        self.column = column


class DuplicateSampleId(DataError):
    def __init__(self, sample_id):
        super().__init__(f"duplicate sample_id {sample_id!r}")
        self.sample_id = sample_id


class NonNumericValue(DataError):
    def __init__(self, row, col, value=None):
        super().__init__(f"non-numeric value {value!r} at row {row}, column {col!r}")
        self.row = row
        self.col = col


class UnknownRoiId(DataError):
    def __init__(self, roi_id):
        super().__init__(f"roi id {roi_id!r} is not in the registry")
        self.roi_id = roi_id


class EmptyClass(DataError):
    def __init__(self, side):
        super().__init__(f"no samples on the {side} side of the contrast")
        self.side = side


class ConstantAllSeries(AbsorbError):
    """Every series in a Kendall's W block is constant; W is undefined."""


class ZeroVariance(DataError):
    """In-mask values have zero variance and cannot be standardized."""


class EmptyRoi(DataError):
    def __init__(self, roi_id):
        super().__init__(f"roi {roi_id} has no voxels in the label volume")
        self.roi_id = roi_id


class TooFewSubjects(DataError):
    pass


class SingleClass(DataError):
    pass


class TooFewRows(DataError):
    pass


class EmptySegment(DataError):
    pass


class DegenerateFit(AbsorbError):
    pass


class NonFiniteInput(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class TooFewCandidates(AbsorbError):
    pass


class UndefinedMetric(AbsorbError):
    def __init__(self, name):
        super().__init__(f"metric {name!r} is undefined (zero denominator)")
        self.name = name


class RankDeficient(DataError):
    def __init__(self, cols):
        super().__init__(f"covariate matrix is rank deficient; columns involved: {list(cols)}")
        self.cols = list(cols)


class CovariateMismatch(DataError):
    pass


class CaseMissingFeatures(DataError):
    def __init__(self, missing):
        super().__init__(f"case data lacks selected feature columns: {sorted(missing)}")
        self.missing = sorted(missing)


class InvalidSpec(ConfigError):
    pass
