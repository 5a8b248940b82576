"""Exception types shared across the package."""


class NightcolorError(Exception):
    """Base class for all data/model errors raised by nightcolor."""


class GridFormatError(NightcolorError, ValueError):
    """Malformed ASCII grid file."""

    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}: "
        if line is not None:
            where += f"line {line}: "
        super().__init__(where + message)


class GeometryError(NightcolorError, ValueError):
    """Grids that must share (or overlap in) geometry do not."""


class DatasetError(NightcolorError, ValueError):
    """Invalid dataset content or CSV layout."""


class ModelError(NightcolorError, ValueError):
    """A model cannot be fitted or used as requested."""


class RankDeficiencyError(ModelError):
    """Design matrix is not of full column rank."""

    def __init__(self, collinear: list[str]):
        self.collinear = list(collinear)
        super().__init__(
            "design matrix is rank deficient; collinear predictors: " + ", ".join(self.collinear)
        )


class ConvergenceWarning(UserWarning):
    """An iterative fit stopped at its iteration limit."""
