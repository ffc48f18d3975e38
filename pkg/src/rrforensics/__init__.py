"""Statistical forensics for center-level signature and referendum tallies."""
__version__ = "0.1.0"

from .errors import DataValidationError, ForensicsError, UndefinedStatistic
from .ingest import CenterRecord, Dataset, EventTally, Filter, parse_centers, read_centers, stratify

__all__ = [
    "__version__", "CenterRecord", "Dataset", "DataValidationError", "EventTally", "Filter",
    "ForensicsError", "UndefinedStatistic", "parse_centers", "read_centers", "stratify",
]
