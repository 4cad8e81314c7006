"""Deterministic C-V2X Mode-4 sidelink simulator: sensing-based
semi-persistent scheduling plus distributed rate and range congestion
control, evaluated with distance-binned delivery, gap, and throughput
metrics."""

__version__ = "0.1.0"

from .channel import ChannelModel, Outcome, RxMeasurement, RxOutcome, Transmission
from .core import Csr, Position, RngPool, RngStream, RoadGeometry, dbm_to_mw, distance, mw_to_dbm
from .dcc import DccScheme, RangeControlConfig, RateControlConfig, SCHEMES
from .engine import RunConfig, RunResult, Simulation, run
from .mac_sps import Grant, SensingStore, SensingWindow, SpsConfig
from .mobility import PRESETS, ScenarioPreset

__all__ = [
    "ChannelModel", "Csr", "DccScheme", "Grant", "Outcome", "PRESETS", "Position",
    "RangeControlConfig", "RateControlConfig", "RngPool", "RngStream", "RoadGeometry",
    "RunConfig", "RunResult", "RxMeasurement", "RxOutcome", "SCHEMES", "ScenarioPreset",
    "SensingStore", "SensingWindow", "Simulation", "SpsConfig", "Transmission",
    "dbm_to_mw", "distance", "mw_to_dbm", "run", "__version__",
]
