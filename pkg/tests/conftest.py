import numpy as np
import pytest

from lipfd.manipulator import (
    PAPER_LITERAL, SYMBOLIC, ScenarioSpec, calibrate_benchmark, run_scenario,
    build_plant,
)
from lipfd.synthesis import SynthesisProblem, solve_design


@pytest.fixture(scope="session")
def paper_plant():
    return build_plant(kind=PAPER_LITERAL)


@pytest.fixture(scope="session")
def sym_plant():
    return build_plant(kind=SYMBOLIC)


@pytest.fixture(scope="session")
def paper_design(paper_plant):
    problem = SynthesisProblem.from_plant(paper_plant, beta=1.0, lam=0.2)
    design = solve_design(problem)
    assert design.solver_status in ("optimal", "near_optimal")
    return design


@pytest.fixture(scope="session")
def sym_design(sym_plant):
    problem = SynthesisProblem.from_plant(sym_plant, beta=1.0, lam=0.2)
    design = solve_design(problem)
    assert design.solver_status in ("optimal", "near_optimal")
    return design


@pytest.fixture(scope="session")
def bench_calibration(sym_design):
    # scenario-1 reference plus noise-on recalibration, shared by the suite
    return calibrate_benchmark(sym_design, SYMBOLIC, with_noise=True)


@pytest.fixture(scope="session")
def scenario2_report(sym_design, bench_calibration):
    spec = ScenarioSpec.from_id(2, seed=2)
    return run_scenario(spec, sym_design, SYMBOLIC, calibration=bench_calibration)


@pytest.fixture(scope="session")
def scenario3_report(sym_design, bench_calibration):
    spec = ScenarioSpec.from_id(3, seed=3)
    return run_scenario(spec, sym_design, SYMBOLIC, calibration=bench_calibration)
