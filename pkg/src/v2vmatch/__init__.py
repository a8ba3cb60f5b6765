"""Discrete-time simulator of context-aware mmWave V2V link scheduling.

Vehicles at a signalized junction exchange sensor data over directional
60 GHz links. Every scheduling epoch the transmitters and receivers are
paired by a deferred-acceptance matching driven by one of three policies
(distance, delay-fairness, or context awareness combining learned rate,
route timeliness and sensing-range extension); within the epoch, per-slot
SINR, beam alignment overhead and deadline-limited queues decide what the
links actually deliver.
"""

from . import channel, geometry, matching, mobility, queueing, simulator
from .channel import AntennaConfig, PathlossParams, RadioConfig
from .geometry import BuildingMap, Footprint, Route, Vec2
from .matching import Matching, PairFeatures, PolicyConfig, PreferenceProfile, Quota
from .mobility import JunctionConfig, Scenario, load_scenario, synth_junction_scenario
from .queueing import DeliveryRecord, QueueConfig, QueueState
from .simulator import MetricsFrame, SimConfig, simulate

__version__ = "0.1.0"

__all__ = [
    "AntennaConfig",
    "BuildingMap",
    "DeliveryRecord",
    "Footprint",
    "JunctionConfig",
    "Matching",
    "MetricsFrame",
    "PairFeatures",
    "PathlossParams",
    "PolicyConfig",
    "PreferenceProfile",
    "QueueConfig",
    "QueueState",
    "Quota",
    "RadioConfig",
    "Route",
    "Scenario",
    "SimConfig",
    "Vec2",
    "channel",
    "geometry",
    "load_scenario",
    "matching",
    "mobility",
    "queueing",
    "simulate",
    "simulator",
    "synth_junction_scenario",
    "__version__",
]
