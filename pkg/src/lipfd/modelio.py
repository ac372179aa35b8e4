"""Text serialization of plants and residual structures.

The on-disk format is JSON: scalar dimension fields ``n, m, l, k1, k2``,
row-major nested arrays for every matrix, and nonlinearities referenced
by registry name plus parameters.  Python's float repr emits the
shortest 17-significant-digit literal that round-trips, so save/load
is bit-faithful.
"""

from __future__ import annotations

import json

import numpy as np

from .model import (
    ContractViolation,
    LipschitzPlant,
    NonlinearMap,
    ResidualStructure,
    PHI_REGISTRY,
    PSI_REGISTRY,
    _phi_none,
    _psi_none,
)

PLANT_FORMAT = "lipfd-plant"
RESIDUAL_FORMAT = "lipfd-residual-structure"
FORMAT_VERSION = 1


def _rows(mat: np.ndarray) -> list:
    return [[float(v) for v in row] for row in np.asarray(mat, dtype=float)]


def plant_to_dict(plant: LipschitzPlant) -> dict:
    phi = plant.phi
    if phi.registry_name is None:
        raise ContractViolation("plant nonlinearity is not a registry entry; cannot serialize")
    return {
        "format": PLANT_FORMAT,
        "version": FORMAT_VERSION,
        "n": plant.n, "m": plant.m, "l": plant.l, "k1": plant.k1, "k2": plant.k2,
        "A": _rows(plant.A), "B": _rows(plant.B), "C": _rows(plant.C),
        "D1": _rows(plant.D1), "D2": _rows(plant.D2),
        "Q1": _rows(plant.Q1), "Q2": _rows(plant.Q2),
        "phi": {
            "name": phi.registry_name,
            "params": dict(phi.registry_params or {}),
            "declared_lipschitz_bound": float(phi.declared_lipschitz_bound),
            "domain_box": _rows(phi.domain_box),
        },
    }


def plant_from_dict(data: dict) -> LipschitzPlant:
    if data.get("format") != PLANT_FORMAT:
        raise ContractViolation(f"not a {PLANT_FORMAT} document")
    phi_spec = data["phi"]
    name = phi_spec["name"]
    params = phi_spec.get("params", {})
    if name not in PHI_REGISTRY:
        raise ContractViolation(f"unknown registry nonlinearity {name!r}")
    evaluator = PHI_REGISTRY[name](**params)
    phi = NonlinearMap(
        evaluator,
        float(phi_spec["declared_lipschitz_bound"]),
        np.array(phi_spec["domain_box"], dtype=float),
        registry_name=name,
        registry_params=dict(params),
    )
    plant = LipschitzPlant(
        A=np.array(data["A"]), B=np.array(data["B"]), C=np.array(data["C"]),
        D1=np.array(data["D1"]), D2=np.array(data["D2"]),
        Q1=np.array(data["Q1"]), Q2=np.array(data["Q2"]), phi=phi,
    )
    for key in ("n", "m", "l", "k1", "k2"):
        if int(data[key]) != getattr(plant, key):
            raise ContractViolation(f"declared {key}={data[key]} disagrees with matrix shapes")
    return plant


def save_plant(plant: LipschitzPlant, path) -> None:
    with open(path, "w") as fh:
        json.dump(plant_to_dict(plant), fh, indent=1)
        fh.write("\n")


def load_plant(path) -> LipschitzPlant:
    with open(path) as fh:
        return plant_from_dict(json.load(fh))


def residual_structure_to_dict(rs: ResidualStructure) -> dict:
    if rs.psi_registry_name is None:
        raise ContractViolation("residual nonlinearity is not a registry entry; cannot serialize")
    return {
        "format": RESIDUAL_FORMAT,
        "version": FORMAT_VERSION,
        "r": rs.r, "l": rs.l, "m": rs.m,
        "M1": _rows(rs.M1), "M2": _rows(rs.M2), "M3": _rows(rs.M3),
        "N1": _rows(rs.N1), "N2": _rows(rs.N2), "N3": _rows(rs.N3),
        "M3n": _rows(rs.M3n),
        "Upsilon": _rows(rs.Upsilon),
        "psi": {"name": rs.psi_registry_name, "params": dict(rs.psi_registry_params or {})},
    }


def residual_structure_from_dict(data: dict) -> ResidualStructure:
    if data.get("format") != RESIDUAL_FORMAT:
        raise ContractViolation(f"not a {RESIDUAL_FORMAT} document")
    psi_spec = data["psi"]
    name = psi_spec["name"]
    params = psi_spec.get("params", {})
    if name not in PSI_REGISTRY:
        raise ContractViolation(f"unknown registry nonlinearity {name!r}")
    return ResidualStructure(
        M1=np.array(data["M1"]), M2=np.array(data["M2"]), M3=np.array(data["M3"]),
        N1=np.array(data["N1"]), N2=np.array(data["N2"]), N3=np.array(data["N3"]),
        Psi=PSI_REGISTRY[name](**params),
        Upsilon=np.array(data["Upsilon"]),
        M3n=np.array(data["M3n"]),
        psi_registry_name=name,
        psi_registry_params=dict(params),
    )


def save_residual_structure(rs: ResidualStructure, path) -> None:
    with open(path, "w") as fh:
        json.dump(residual_structure_to_dict(rs), fh, indent=1)
        fh.write("\n")


def load_residual_structure(path) -> ResidualStructure:
    with open(path) as fh:
        return residual_structure_from_dict(json.load(fh))
