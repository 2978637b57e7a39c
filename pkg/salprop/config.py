# salprop/config.py
"""
Run configuration for the proposal pipeline.

The parameter registry below drives both the validated ``RunConfig`` model and
the command-line flags, so a tunable only has to be declared once.
"""

import datetime
import json
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .common import UsageError, atomic_write_text

# ---------------- Parameter registry ----------------
# (key, flag, help)
PARAMS = [
    ("alpha", "--alpha", "IoU between adjacent same-size sliding windows"),
    ("nms_theta", "--nms-theta", "IoU cut-off for proposal NMS"),
    ("max_n", "--max-n", "maximum number of proposals kept per image"),
    ("top_k", "--top-k", "number of windows refined before NMS"),
    ("T", "--ltp-threshold", "local ternary pattern threshold (grey levels)"),
    ("beta", "--beta", "salient split: strength >= beta * strongest edgelet"),
    ("k", "--k", "base scale of the DoG/LoG filter bank"),
    ("radius", "--radius", "radius of the two texture patches (pixels)"),
    ("sigma", "--sigma", "Gaussian derivative scale of the built-in edge detector"),
    ("min_len", "--min-len", "edgelets must be strictly longer than this (pixels)"),
    ("min_mag", "--min-mag", "edge pixels must be strictly stronger than this"),
    ("link_radius", "--link-radius", "endpoint distance that links two edgelets (pixels)"),
    ("max_degree", "--max-degree", "maximum number of links per edgelet"),
    ("bp_iters", "--bp-iters", "maximum belief propagation iterations"),
    ("damping", "--damping", "message damping of loopy belief propagation"),
    ("boundary_tol", "--boundary-tol", "mask boundary tolerance for weak labels (pixels)"),
    ("seed", "--seed", "random seed (SALPROP_SEED overrides)"),
    ("C", "--C", "structured SVM regularisation constant"),
    ("max_passes", "--max-passes", "maximum BCFW passes over the training set"),
    ("gap_tol", "--gap-tol", "BCFW stops once the duality gap drops below this"),
    ("scale_min", "--scale-min", "smallest window area as a fraction of the image"),
    ("scale_max", "--scale-max", "largest window area as a fraction of the image"),
    ("scale_step", "--scale-step", "arithmetic step between window area fractions"),
    ("jobs", "--jobs", "number of images processed concurrently"),
]

SEED_ENV = "SALPROP_SEED"
CONFIG_KIND = "salprop_config"


class RunConfig(BaseModel):
    """Every tunable of detect / train / eval with its default value."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    alpha: float = Field(0.65, gt=0.0, lt=1.0)
    nms_theta: float = Field(0.75, gt=0.0, lt=1.0)
    max_n: int = Field(1000, ge=1)
    top_k: int = Field(1000, ge=1)
    T: float = Field(5.0, gt=0.0)
    beta: float = Field(0.8, gt=0.0)
    k: float = Field(0.5, gt=0.0)
    radius: int = Field(5, ge=1)
    sigma: float = Field(1.0, gt=0.0)
    min_len: int = Field(15, ge=0)
    min_mag: float = Field(40.0, ge=0.0, lt=255.0)
    link_radius: float = Field(15.0, ge=0.0)
    max_degree: int = Field(8, ge=1)
    bp_iters: int = Field(50, ge=1)
    damping: float = Field(0.5, ge=0.0, lt=1.0)
    boundary_tol: float = Field(2.0, ge=0.0)
    seed: int = Field(42, ge=0)
    C: float = Field(1.0, ge=0.0)
    max_passes: int = Field(200, ge=1)
    gap_tol: float = Field(1e-3, gt=0.0)
    scale_min: float = Field(0.005, gt=0.0, le=1.0)
    scale_max: float = Field(0.95, gt=0.0, le=1.0)
    scale_step: float = Field(0.01, gt=0.0)
    jobs: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check_scales(self) -> "RunConfig":
        if self.scale_min >= self.scale_max:
            raise ValueError("scale_min must be smaller than scale_max")
        return self

    def as_flags(self) -> Dict[str, Any]:
        """Return the settings in registry order, for reproducibility headers."""
        values = self.model_dump()
        return {key: values[key] for key, _flag, _help in PARAMS}


def build_config(values: Optional[Mapping[str, Any]] = None, env: Optional[Mapping[str, str]] = None) -> RunConfig:
    """
    Validate a mapping of settings into a RunConfig.

    Unknown keys and out-of-range values raise ``UsageError``. The
    ``SALPROP_SEED`` environment variable, when set, replaces the seed.

    Parameters
    ----------
    values : mapping, optional
        Settings to override; missing keys keep their defaults.
    env : mapping, optional
        Environment to consult (defaults to ``os.environ``).
    """
    data = dict(values or {})
    env = os.environ if env is None else env
    seed_text = env.get(SEED_ENV)
    if seed_text not in (None, ""):
        try:
            data["seed"] = int(seed_text)
        except ValueError as e:
            raise UsageError(f"{SEED_ENV} must be an integer, got {seed_text!r}") from e
    try:
        return RunConfig(**data)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise UsageError(f"invalid configuration: {problems}") from e


def load_config_file(path: os.PathLike) -> Dict[str, Any]:
    """
    Read the ``params`` block of a saved configuration file.

    The file has the same shape as a saved tune: a ``kind`` tag, a ``params``
    object and a ``saved_at`` timestamp.
    """
    try:
        with open(path, "r", encoding="utf-8") as handle:
            doc = json.load(handle)
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: not a JSON config file ({e})") from e
    if not isinstance(doc, dict) or doc.get("kind") != CONFIG_KIND:
        raise UsageError(f"{path}: expected a '{CONFIG_KIND}' document")
    params = doc.get("params", {})
    if not isinstance(params, dict):
        raise UsageError(f"{path}: 'params' must be an object")
    return params


def save_config_file(config: RunConfig, path: os.PathLike, note: str = "") -> Path:
    """Write ``config`` as a JSON document readable by :func:`load_config_file`."""
    doc = {
        "kind": CONFIG_KIND,
        "params": config.as_flags(),
        "note": note,
        "saved_at": datetime.datetime.now().strftime("%Y%m%d_%H_%M_%S"),
    }
    return atomic_write_text(path, json.dumps(doc, indent=2) + "\n")
