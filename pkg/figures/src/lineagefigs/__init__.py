"""Figure rendering for simulator trace files: genealogy, trait occupancy,
mass trajectory, and estimator comparison panels."""

from .panels import (PANELS, FigureSpec, RenderInfo, genealogy_polylines,
                     occupancy_histogram, render)
from .schema import SchemaError

__version__ = "0.1.0"
