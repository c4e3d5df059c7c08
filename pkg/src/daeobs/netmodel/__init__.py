"""Network case parsing, power flow, and DAE model assembly."""

from .case import (OMEGA_S, Branch, Bus, CaseError, Generator,
                   GeneratorParams, NetworkCase, Renewable, case_to_json,
                   load_case, load_case9, load_machines_json, parse_case,
                   parse_case_json)
from .ndae import (Equilibrium, ModelError, NdaeDims, NdaeSystem,
                   assemble_ndae, init_equilibrium, resize_disturbance)
from .powerflow import (PowerFlowError, PowerFlowSolution, bus_admittance,
                        equilibrium_report_csv, flow_injections,
                        flow_jacobian, solve_power_flow)

__all__ = [
    "OMEGA_S", "Branch", "Bus", "CaseError", "Generator", "GeneratorParams",
    "NetworkCase", "Renewable", "case_to_json", "load_case", "load_case9",
    "load_machines_json", "parse_case", "parse_case_json",
    "Equilibrium", "ModelError", "NdaeDims", "NdaeSystem", "assemble_ndae",
    "init_equilibrium", "resize_disturbance",
    "PowerFlowError", "PowerFlowSolution", "bus_admittance",
    "equilibrium_report_csv", "flow_injections", "flow_jacobian",
    "solve_power_flow",
]
