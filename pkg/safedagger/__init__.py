"""safedagger — query-efficient imitation learning in a 2D driving lab."""

__version__ = "0.1.0"

from safedagger.models import Action, CarState, LabelVector, QueryLedger, TrackSpec, WorldState
from safedagger.app import App

__all__ = ["App", "Action", "CarState", "LabelVector", "QueryLedger", "TrackSpec", "WorldState"]
