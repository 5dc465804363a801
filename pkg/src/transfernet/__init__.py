"""Bilevel design of multimodal transfer capacity: a capacitated combined
destination/mode/route logit equilibrium below, a budgeted genetic search
above, and experiments on Braess-like effects of adding parking."""
__version__ = "0.1.0"

from .netmodel import (BehaviorParams, CostFn, DemandSpec, Design, Scenario, ScenarioError,
                       apply_design, enumerate_paths, load_scenario, load_scenario_file)
from .equilibrium import (EquilibriumState, KktReport, SolverOptions, kkt_check, logit_split,
                          objective_value, solve_lower_level, total_travel_time)
from .design import GaParams, GaResult, check_feasible, construction_cost, fitness, ga_solve


def data_path(name):
    """Absolute path of a bundled scenario such as ``"fig2.json"``."""
    import os
    return os.path.join(os.path.dirname(__file__), "data", name)
