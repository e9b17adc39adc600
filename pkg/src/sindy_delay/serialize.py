"""JSON encodings of fitted models (``model.json`` and ``bio_model.json``)."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import jsonschema
import numpy as np

from .dde_sim import DelayModel
from .library import LibrarySpec, enumerate_terms, parse_term, serialize_term
from .models import BioModel, bio_term_names

_NUM = {"type": "number"}

MODEL_SCHEMA = {
    "type": "object",
    "required": ["library", "terms", "coeffs", "delays"],
    "properties": {
        "library": {
            "type": "object",
            "required": ["d", "M", "cross_policy", "delayed"],
            "properties": {
                "d": {"type": "integer", "minimum": 1},
                "M": {"type": "integer", "minimum": 0},
                "cross_policy": {"enum": ["full", "exclude-mixed"]},
                "delayed": {"type": "boolean"},
            },
        },
        "terms": {"type": "array", "items": {"type": "string"}},
        "coeffs": {"type": "array", "items": {"type": "array", "items": _NUM}},
        "delays": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "shifts": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "dormant": {"type": "boolean"},
        "provenance": {"type": "object"},
        "scoring": {"type": "object"},
    },
}

BIO_SCHEMA = {
    "type": "object",
    "required": ["tau_wt", "tau_dca", "terms", "f", "g"],
    "properties": {
        "zinc_mM": {"type": ["number", "null"]},
        "tau_wt": {"type": "number", "minimum": 0},
        "tau_dca": {"type": "number", "minimum": 0},
        "terms": {"type": "array", "items": {"type": "string"}},
        "f": {"type": "array", "items": _NUM, "minItems": 10, "maxItems": 10},
        "g": {"type": "array", "items": _NUM, "minItems": 10, "maxItems": 10},
        "provenance": {"type": "object"},
    },
}


class SchemaError(ValueError):
    """Raised when a model file does not match its schema; names the field path."""


def _validate(doc, schema, source):
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"{source}: {exc.json_path}: {exc.message}") from None


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2) + "\n"


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def sha256_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def model_to_dict(model: DelayModel, provenance=None, extra=None) -> dict:
    doc = {
        "library": model.spec.to_dict(),
        "terms": [serialize_term(t) for t in model.terms],
        "coeffs": [[float(v) for v in model.coeffs[:, k]] for k in range(model.dim)],
        "delays": [float(v) for v in model.delays],
    }
    if np.any(model.shifts) or model.dormant:
        doc["shifts"] = [float(v) for v in model.shifts]
        doc["dormant"] = bool(model.dormant)
    doc.update(extra or {})
    doc["provenance"] = dict(provenance or {})
    return doc


def model_from_dict(doc: dict, source="model") -> DelayModel:
    _validate(doc, MODEL_SCHEMA, source)
    spec = LibrarySpec.from_dict(doc["library"])
    terms = [parse_term(t) for t in doc["terms"]]
    if terms != enumerate_terms(spec):
        raise SchemaError(f"{source}: $.terms: does not match the library enumeration")
    coeffs = np.array(doc["coeffs"], dtype=float)
    if coeffs.shape != (spec.dim, len(terms)):
        raise SchemaError(
            f"{source}: $.coeffs: expected {spec.dim} lists of {len(terms)} numbers"
        )
    if len(doc["delays"]) != spec.dim:
        raise SchemaError(f"{source}: $.delays: expected {spec.dim} entries")
    return DelayModel(spec, coeffs.T, doc["delays"], shifts=doc.get("shifts"),
                      dormant=doc.get("dormant", False))


def load_model(path):
    """Return ``(DelayModel, document)`` from a ``model.json`` file."""
    doc = json.loads(Path(path).read_text())
    return model_from_dict(doc, str(path)), doc


def bio_to_dict(model: BioModel, provenance=None, extra=None) -> dict:
    zinc = model.meta.get("zinc_mM")
    doc = {
        "zinc_mM": None if zinc is None or zinc != zinc else float(zinc),
        "tau_wt": float(model.tau_wt),
        "tau_dca": float(model.tau_dca),
        "terms": bio_term_names(),
        "f": [float(v) for v in model.f_coeffs],
        "g": [float(v) for v in model.g_coeffs],
        "named": model.named(),
    }
    doc.update(extra or {})
    doc["provenance"] = dict(provenance or {})
    return doc


def bio_from_dict(doc: dict, source="bio_model") -> BioModel:
    _validate(doc, BIO_SCHEMA, source)
    if doc["terms"] != bio_term_names():
        raise SchemaError(f"{source}: $.terms: unexpected term order")
    meta = {} if doc.get("zinc_mM") is None else {"zinc_mM": doc["zinc_mM"]}
    return BioModel(doc["f"], doc["g"], doc["tau_wt"], doc["tau_dca"], meta)


def load_bio_model(path):
    doc = json.loads(Path(path).read_text())
    return bio_from_dict(doc, str(path)), doc
