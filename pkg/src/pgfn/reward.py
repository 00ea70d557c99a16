"""Reward construction: cosine similarity to a frozen target latent, shifted
into [0.5, 1.5] for positivity, with the sharpening exponent applied in the
log domain so large exponents never blow up value scales."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embed import GMCModel
from .errors import MissingStructure, ParseError
from .validation import as_float_vector, check_unit_vector

MORPH_ONLY = "morph"
JOINT = "joint"


@dataclass(frozen=True)
class RewardSpec:
    """Frozen conditioning target; downstream training never updates it."""

    target_latent: np.ndarray
    beta: float = 64.0
    mode: str = MORPH_ONLY
    target_id: str = "target"

    def __post_init__(self):
        z = as_float_vector(self.target_latent, name="target latent")
        check_unit_vector(z, name="target latent")
        object.__setattr__(self, "target_latent", z)
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.mode not in (MORPH_ONLY, JOINT):
            raise ValueError(f"unknown conditioning mode {self.mode!r}")


def make_target(model: GMCModel, morph_feat, struct_feat=None, *,
                mode: str = MORPH_ONLY, beta: float = 64.0,
                target_id: str = "target") -> RewardSpec:
    """Build the frozen target latent from the morphology readout alone or
    from the (structure, morphology) pair through the joint encoder."""
    if mode == JOINT:
        if struct_feat is None:
            raise MissingStructure("joint conditioning needs the target structure")
        z = model.embed_joint(struct_feat, morph_feat)
    elif mode == MORPH_ONLY:
        z = model.embed_morphology(morph_feat)
    else:
        raise ValueError(f"unknown conditioning mode {mode!r}")
    return RewardSpec(target_latent=z, beta=beta, mode=mode, target_id=target_id)


def raw_reward(spec: RewardSpec, mol_latent: np.ndarray) -> float:
    """1 + cos/2, bounded in [0.5, 1.5]; inputs are unit vectors."""
    cos = float(np.dot(spec.target_latent, mol_latent))
    return 1.0 + cos / 2.0


def log_reward(spec: RewardSpec, mol_latent: np.ndarray) -> float:
    """beta * ln(raw reward); what every learner consumes."""
    return spec.beta * math.log(raw_reward(spec, mol_latent))


def log_reward_from_raw(spec: RewardSpec, raw: float) -> float:
    return spec.beta * math.log(raw)


# -- target file (targets.tsv) ---------------------------------------------------

_TARGET_HEADER = "#pgfn-targets v1"


def save_targets(path, targets: list[tuple[str, str, str, np.ndarray]]) -> None:
    """Rows of (targetId, mode, serialized molecule or '', morphology vector)."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(_TARGET_HEADER + "\n")
        for target_id, mode, mol_text, morph in targets:
            feats = "\t".join(repr(float(v)) for v in morph)
            fh.write(f"{target_id}\t{mode}\t{mol_text}\t{feats}\n")


def load_targets(path) -> list[tuple[str, str, str, np.ndarray]]:
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != _TARGET_HEADER:
        raise ParseError(f"{path}: missing '{_TARGET_HEADER}' header")
    out = []
    for ln in lines[1:]:
        parts = ln.split("\t")
        if len(parts) < 4:
            raise ParseError(f"{path}: bad target line {ln!r}")
        target_id, mode, mol_text = parts[0], parts[1], parts[2]
        morph = np.array([float(v) for v in parts[3:]], dtype=np.float64)
        out.append((target_id, mode, mol_text, morph))
    return out
