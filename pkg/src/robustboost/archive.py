"""Versioned model archives.

Parameters are stored as decimal text with 17 significant digits, which
round-trips IEEE doubles exactly: save -> load -> save is byte-identical
and a loaded model reproduces its scores bit for bit. Labels inside
archives are 1-based (external convention).
"""

from __future__ import annotations

import json

import numpy as np

from robustboost.core import FiniteDistribution, RobustBoostError
from robustboost.hypotheses import AdditiveEnsemble, DecisionStump, LinearScorer, MixtureQ, Mlp

FORMAT_VERSION = 1


class VersionMismatchError(RobustBoostError):
    """Archive written by a newer format version."""


class CorruptArchiveError(RobustBoostError):
    """Archive failed to parse or is structurally invalid."""


def _f(v: float) -> str:
    return f"{float(v):.17g}"


def _fs(arr) -> list:
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 1:
        return [_f(v) for v in a]
    return [_fs(row) for row in a]


def _parse_floats(obj) -> np.ndarray:
    return np.array(obj, dtype=np.float64)


def _stump_doc(h: DecisionStump) -> dict:
    return {
        "type": "stump",
        "feature": h.feature,
        "threshold": _f(h.threshold),
        "left": h.left + 1,
        "right": h.right + 1,
    }


def _predictor_doc(f) -> dict:
    if isinstance(f, Mlp):
        return {
            "type": "mlp",
            "layers": [{"W": _fs(W), "b": _fs(b)} for W, b in f.layers],
        }
    if isinstance(f, LinearScorer):
        return {"type": "linear", "W": _fs(f.W), "b": _fs(f.b)}
    if isinstance(f, DecisionStump):
        return _stump_doc(f)
    raise CorruptArchiveError(f"cannot archive predictor of type {type(f).__name__}")


def _predictor_from_doc(doc: dict):
    t = doc.get("type")
    if t == "mlp":
        return Mlp([(_parse_floats(l["W"]), _parse_floats(l["b"])) for l in doc["layers"]])
    if t == "linear":
        return LinearScorer(_parse_floats(doc["W"]), _parse_floats(doc["b"]))
    if t == "stump":
        return DecisionStump(
            int(doc["feature"]), float(doc["threshold"]),
            int(doc["left"]) - 1, int(doc["right"]) - 1,
        )
    raise CorruptArchiveError(f"unknown predictor type {t!r}")


def model_to_doc(model, config_echo: dict | None = None, seed: int | None = None) -> dict:
    """Serialize a mixture, additive ensemble, or smoothed radius predictor."""
    from robustboost.certify import SmoothedRadiusPredictor

    doc: dict = {"format_version": FORMAT_VERSION}
    if config_echo is not None:
        doc["config"] = config_echo
    if seed is not None:
        doc["seed"] = seed
    if isinstance(model, MixtureQ):
        doc["kind"] = "mixture"
        doc["k"] = model.k
        doc["weights"] = _fs(model.weights.weights)
        doc["members"] = [_predictor_doc(h) for h in model.hypotheses]
    elif isinstance(model, AdditiveEnsemble):
        doc["kind"] = "additive-ensemble"
        doc["k"] = model.k
        doc["components"] = [
            {"beta": _f(beta), "model": _predictor_doc(f)} for beta, f in model.components
        ]
    elif isinstance(model, SmoothedRadiusPredictor):
        doc["kind"] = "radius-predictor"
        doc["sigma"] = _f(model.config.sigma)
        doc["n_samples"] = model.config.n_samples
        doc["noise_seed"] = model.config.rng.seed
        doc["noise_stream"] = model.config.rng.stream
        doc["conservative"] = model.config.conservative
        doc["alpha"] = _f(model.config.alpha)
        doc["base"] = model_to_doc(model.f)
    else:
        raise CorruptArchiveError(f"cannot archive model of type {type(model).__name__}")
    return doc


def model_from_doc(doc: dict):
    from robustboost.certify import SmoothedRadiusPredictor, SmoothingConfig
    from robustboost.core import SeededRng

    if not isinstance(doc, dict) or "kind" not in doc or "format_version" not in doc:
        raise CorruptArchiveError("missing kind or format_version")
    version = doc["format_version"]
    if version > FORMAT_VERSION:
        raise VersionMismatchError(f"archive format {version} is newer than supported {FORMAT_VERSION}")
    kind = doc["kind"]
    try:
        if kind == "mixture":
            members = [_predictor_from_doc(m) for m in doc["members"]]
            weights = FiniteDistribution(_parse_floats(doc["weights"]))
            return MixtureQ(members, weights, int(doc["k"]))
        if kind == "additive-ensemble":
            comps = [
                (float(c["beta"]), _predictor_from_doc(c["model"])) for c in doc["components"]
            ]
            return AdditiveEnsemble(comps, int(doc["k"]))
        if kind == "radius-predictor":
            base = model_from_doc({**doc["base"], "format_version": version})
            cfg = SmoothingConfig(
                float(doc["sigma"]), int(doc["n_samples"]),
                SeededRng(int(doc["noise_seed"]), int(doc["noise_stream"])),
                conservative=bool(doc.get("conservative", False)),
                alpha=float(doc.get("alpha", 0.001)),
            )
            return SmoothedRadiusPredictor(base, cfg)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptArchiveError(f"malformed archive: {exc}") from exc
    raise CorruptArchiveError(f"unknown model kind {kind!r}")


def dumps_doc(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def save_model(model, path: str, config_echo: dict | None = None, seed: int | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_doc(model_to_doc(model, config_echo, seed)))


def load_model(path: str):
    """Load a model archive; returns (model, document)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptArchiveError(f"cannot parse archive: {exc}") from exc
    return model_from_doc(doc), doc


def roundtrip_bytes(path: str) -> bytes:
    """Bytes that a load-then-save of the archive would produce."""
    model, doc = load_model(path)
    cfg = doc.get("config")
    seed = doc.get("seed")
    return dumps_doc(model_to_doc(model, cfg, seed)).encode("utf-8")
