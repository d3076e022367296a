"""Online multi-energy and carbon trading simulator for industrial clusters."""
from .model import ParkModel, build_scenario, load_scenario, save_scenario
from .sim import SimTrace, emit_plots, run_ablation, run_simulation
from .synth import synthetic_park

__all__ = ["ParkModel", "SimTrace", "build_scenario", "emit_plots", "load_scenario", "run_ablation",
           "run_simulation", "save_scenario", "synthetic_park"]
