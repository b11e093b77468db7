"""Network bundles for the two sub-systems and their checkpoint layout.

A checkpoint is a directory holding ``manifest.json`` plus one binary blob per
sub-network (``torch.save`` state dicts) and numpy arrays for the shape model.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import torch

from . import __version__
from .datamodel import IMG_CODE_DIM, LMK_CODE_DIM, NOISE_DIM, NUM_LANDMARKS, PCA_DIM, AgeGroup, Modality
from .imgnet import ImageDiscriminator, ImageGenerator, ImagePredictor
from .lmknet import (
    POSE_SUBSET,
    LandmarkDiscriminator,
    LandmarkGenerator,
    LandmarkPredictor,
    PcaBasis,
    ReferencePoints3D,
)
from .mapper import AgeMapper

FORMAT_VERSION = 1
NET_NAMES = ("mapper", "generator", "predictor", "discriminator")


class CheckpointError(RuntimeError):
    pass


@dataclass
class ImageNets:
    mapper: AgeMapper
    generator: ImageGenerator
    predictor: ImagePredictor
    discriminator: ImageDiscriminator
    groups: tuple[AgeGroup, ...]
    resolution: int

    kind = "img"

    @classmethod
    def build(cls, groups, resolution: int = 64, seed: int = 0) -> "ImageNets":
        groups = tuple(groups)
        torch.manual_seed(seed)
        k = len(groups)
        return cls(
            AgeMapper(k, Modality.IMAGE),
            ImageGenerator(resolution),
            ImagePredictor(k, resolution),
            ImageDiscriminator(k, resolution),
            groups,
            resolution,
        )

    def dims(self) -> dict:
        return {"noise": NOISE_DIM, "code": IMG_CODE_DIM, "resolution": self.resolution, "K": len(self.groups)}

    def arrays(self) -> dict[str, np.ndarray]:
        return {}


@dataclass
class LandmarkNets:
    mapper: AgeMapper
    generator: LandmarkGenerator
    predictor: LandmarkPredictor
    discriminator: LandmarkDiscriminator
    groups: tuple[AgeGroup, ...]
    pca: PcaBasis
    reference: ReferencePoints3D
    group_means: np.ndarray  # (K, 162) mean real landmarks per trainable group
    subset: tuple[int, ...] = POSE_SUBSET

    kind = "lmk"

    @classmethod
    def build(cls, groups, pca: PcaBasis, group_means: np.ndarray, seed: int = 0,
              min_separation: float = 0.5) -> "LandmarkNets":
        groups = tuple(groups)
        torch.manual_seed(seed)
        k = len(groups)
        ref = ReferencePoints3D.sample(np.random.default_rng(seed), len(POSE_SUBSET), min_separation)
        return cls(
            AgeMapper(k, Modality.LANDMARK),
            LandmarkGenerator(),
            LandmarkPredictor(k),
            LandmarkDiscriminator(k),
            groups,
            pca,
            ref,
            np.asarray(group_means, float),
        )

    def dims(self) -> dict:
        return {"noise": NOISE_DIM, "code": LMK_CODE_DIM, "pca": PCA_DIM, "landmarks": NUM_LANDMARKS,
                "K": len(self.groups)}

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "pca_mean": self.pca.mean,
            "pca_components": self.pca.components,
            "pca_explained_variance": self.pca.explained_variance,
            "reference_points": self.reference.points,
            "group_means": self.group_means,
            "pose_subset": np.asarray(self.subset),
        }


def _nets(bundle) -> dict[str, torch.nn.Module]:
    return {n: getattr(bundle, n) for n in NET_NAMES}


def save_checkpoint(directory, bundle, *, extra_state: dict[str, Any] | None = None,
                    meta: dict[str, Any] | None = None) -> Path:
    """Write networks, shape-model arrays and optional trainer state to ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    blobs = {}
    for name, net in _nets(bundle).items():
        torch.save(net.state_dict(), d / f"{name}.pt")
        blobs[name] = f"{name}.pt"
    for name, arr in bundle.arrays().items():
        np.save(d / f"{name}.npy", arr)
        blobs[name] = f"{name}.npy"
    if extra_state:
        torch.save(extra_state, d / "trainer_state.pt")
        blobs["trainer_state"] = "trainer_state.pt"
    manifest = {
        "format_version": FORMAT_VERSION,
        "package_version": __version__,
        "kind": bundle.kind,
        "groups": [g.bounds_str for g in bundle.groups],
        "dims": bundle.dims(),
        "blobs": blobs,
        **(meta or {}),
    }
    if bundle.kind == "img":
        manifest["resolution"] = bundle.resolution
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return d


def resolve_checkpoint(directory) -> Path:
    d = Path(directory)
    for cand in (d, d / "final"):
        if (cand / "manifest.json").exists():
            return cand
    raise CheckpointError(f"no checkpoint manifest under {d}")


def read_manifest(directory) -> dict:
    return json.loads((resolve_checkpoint(directory) / "manifest.json").read_text())


def load_checkpoint(directory, expect: str | None = None):
    """Returns (bundle, manifest, trainer_state or None)."""
    d = resolve_checkpoint(directory)
    m = json.loads((d / "manifest.json").read_text())
    if m.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {m.get('format_version')}")
    kind = m["kind"]
    if expect and kind != expect:
        raise CheckpointError(f"expected a {expect!r} checkpoint, found {kind!r}")
    groups = tuple(AgeGroup.parse(g) for g in m["groups"])
    blobs = m["blobs"]
    missing = [b for b in blobs.values() if not (d / b).exists()]
    if missing:
        raise CheckpointError(f"checkpoint {d} is missing blobs {missing}")
    if kind == "img":
        bundle = ImageNets.build(groups, m["resolution"])
    elif kind == "lmk":
        arr = {n: np.load(d / blobs[n]) for n in ("pca_mean", "pca_components", "pca_explained_variance",
                                                  "reference_points", "group_means", "pose_subset")}
        bundle = LandmarkNets(
            AgeMapper(len(groups), Modality.LANDMARK),
            LandmarkGenerator(),
            LandmarkPredictor(len(groups)),
            LandmarkDiscriminator(len(groups)),
            groups,
            PcaBasis(arr["pca_mean"], arr["pca_components"], arr["pca_explained_variance"]),
            ReferencePoints3D(arr["reference_points"]),
            arr["group_means"],
            tuple(int(i) for i in arr["pose_subset"]),
        )
    else:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    for name, net in _nets(bundle).items():
        net.load_state_dict(torch.load(d / blobs[name], weights_only=True))
    state = torch.load(d / blobs["trainer_state"], weights_only=False) if "trainer_state" in blobs else None
    return bundle, m, state

