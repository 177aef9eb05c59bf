"""JSON model files.

A model file is one JSON object::

    {
      "format_version": 1,
      "M": 4,                      # number of states
      "N": 2,                      # extensivity scale
      "potential": [0.0, 1.0, 1.0, 2.0],
      "kinetic": [[0, 1, -1.0], [0, 2, -1.0], [1, 3, -1.0], [2, 3, -1.0]],
      "cavity": [0],               # optional
      "family": "hypercube_free",  # optional provenance of generated models
      "parameters": {"N": 2, "gamma": 1.0},
      "seed": 0
    }

Each kinetic triplet ``[i, j, value]`` has ``i < j`` and ``value = K[i, j]``.
Unknown keys are rejected.  Floats are written with ``repr`` precision, so a
saved model reloads bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ModelFileError
from .fock import Hamiltonian, build_hamiltonian

FORMAT_VERSION = 1
REQUIRED = ("format_version", "M", "N", "potential", "kinetic")
OPTIONAL = ("cavity", "family", "parameters", "seed")


def model_to_dict(H: Hamiltonian, cavity=None, spec=None) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "M": H.M,
        "N": H.N if H.N != int(H.N) else int(H.N),
        "potential": [float(v) for v in H.potential],
        "kinetic": [[i, j, v] for i, j, v in H.links()],
    }
    if cavity is not None:
        doc["cavity"] = [int(c) for c in cavity]
    if spec is not None:
        doc["family"] = spec.family
        doc["parameters"] = spec.params
        doc["seed"] = int(spec.seed)
    return doc


def dumps_model(H: Hamiltonian, cavity=None, spec=None) -> str:
    return json.dumps(model_to_dict(H, cavity, spec), indent=1, sort_keys=False) + "\n"


def save_model(path, H: Hamiltonian, cavity=None, spec=None) -> None:
    Path(path).write_text(dumps_model(H, cavity, spec))


def model_from_dict(doc: dict):
    """Return ``(H, cavity or None, provenance dict or None)``."""
    if not isinstance(doc, dict):
        raise ModelFileError("model file must contain a JSON object")
    unknown = set(doc) - set(REQUIRED) - set(OPTIONAL)
    if unknown:
        raise ModelFileError(f"unknown fields: {sorted(unknown)}")
    missing = [k for k in REQUIRED if k not in doc]
    if missing:
        raise ModelFileError(f"missing fields: {missing}")
    if doc["format_version"] != FORMAT_VERSION:
        raise ModelFileError(f"unsupported format_version {doc['format_version']!r}")
    M = doc["M"]
    if not isinstance(M, int) or isinstance(M, bool):
        raise ModelFileError("M must be an integer")
    links = []
    for entry in doc["kinetic"]:
        if not (isinstance(entry, list) and len(entry) == 3):
            raise ModelFileError(f"kinetic entry {entry!r} is not a triplet")
        i, j, v = entry
        if not (isinstance(i, int) and isinstance(j, int)) or i >= j:
            raise ModelFileError(f"kinetic entry {entry!r} needs integer ids with i < j")
        links.append((i, j, float(v)))
    H = build_hamiltonian(M, float(doc["N"]), np.asarray(doc["potential"], dtype=float), links)
    cavity = doc.get("cavity")
    if cavity is not None:
        cavity = [int(c) for c in cavity]
    prov = None
    if "family" in doc:
        prov = {"family": doc["family"], "parameters": doc.get("parameters", {}),
                "seed": doc.get("seed", 0)}
    return H, cavity, prov


def loads_model(text: str):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"invalid JSON: {exc}") from exc
    return model_from_dict(doc)


def load_model(path):
    return loads_model(Path(path).read_text())
