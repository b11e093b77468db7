"""Training loops for the image and landmark sub-networks.

Each step runs one discriminator update followed by one joint
mapper + generator + predictor update. All stochastic choices (batch indices,
target groups, noise) come from a single ``torch.Generator`` whose state is
stored in checkpoints, so resuming replays the exact same sequence.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from . import losses as L
from .datamodel import NOISE_DIM, NUM_LANDMARKS, AgeGroup, RunConfig
from .io import dataset_manifest, read_landmarks
from .lmknet import PcaBasis, fit_pca, pose_params
from .models import ImageNets, LandmarkNets, load_checkpoint, save_checkpoint
from .oracles import OracleSuite

log = logging.getLogger(__name__)

ADAM_BETAS = (0.0, 0.99)
ADAM_EPS = 1e-8


@dataclass
class ImageDataset:
    images: torch.Tensor  # (N, 3, R, R)
    groups: torch.Tensor  # (N,) index into the trainable groups

    def __len__(self):
        return len(self.groups)

    @classmethod
    def from_dir(cls, directory, gender: str, groups, resolution: int) -> "ImageDataset":
        index = {g: i for i, g in enumerate(groups)}
        imgs, idx = [], []
        for row in dataset_manifest(directory, ("group", "gender")):
            if row["gender"] != gender:
                continue
            g = AgeGroup.parse(row["group"])
            if g not in index:
                log.warning("skipping %s: group %s is not trainable", row["path"], g)
                continue
            with Image.open(row["path"]) as im:
                im = im.convert("RGB")
                if im.size != (resolution, resolution):
                    im = im.resize((resolution, resolution), Image.BILINEAR)
                a = np.asarray(im, dtype=np.float32) / 127.5 - 1.0
            imgs.append(a.transpose(2, 0, 1))
            idx.append(index[g])
        if not imgs:
            raise ValueError(f"no {gender!r} images from trainable groups under {directory}")
        return cls(torch.as_tensor(np.stack(imgs)), torch.as_tensor(idx))


@dataclass
class LandmarkDataset:
    landmarks: np.ndarray  # (N, 162) float64
    groups: np.ndarray  # (N,)

    def __len__(self):
        return len(self.groups)

    def group_means(self, k: int) -> np.ndarray:
        return np.stack([self.landmarks[self.groups == i].mean(axis=0) for i in range(k)])

    @classmethod
    def from_dir(cls, directory, gender: str, groups) -> "LandmarkDataset":
        index = {g: i for i, g in enumerate(groups)}
        pts, idx = [], []
        for row in dataset_manifest(directory, ("group", "gender")):
            if row["gender"] != gender:
                continue
            g = AgeGroup.parse(row["group"])
            if g not in index:
                log.warning("skipping %s: group %s is not trainable", row["path"], g)
                continue
            pts.append(read_landmarks(row["path"]).flatten())
            idx.append(index[g])
        if not pts:
            raise ValueError(f"no {gender!r} landmark sets from trainable groups under {directory}")
        ds = cls(np.stack(pts), np.asarray(idx))
        missing = [groups[i] for i in range(len(groups)) if not np.any(ds.groups == i)]
        if missing:
            raise ValueError(f"no training landmarks for groups {[str(g) for g in missing]}")
        return ds


def load_landmark_dir(directory, gender: str):
    """All landmark sets of one gender, any group (for PCA fitting)."""
    return [read_landmarks(r["path"]) for r in dataset_manifest(directory, ("gender",)) if r["gender"] == gender]


class _Trainer:
    kind = ""
    log_fields: tuple[str, ...] = ()

    def __init__(self, cfg: RunConfig, nets, dataset):
        self.cfg = cfg
        self.hp = cfg.hp
        self.nets = nets
        self.dataset = dataset
        self.rng = torch.Generator().manual_seed(cfg.seed + 1)
        self.step = 0
        g_params = [p for n in (nets.mapper, nets.generator, nets.predictor) for p in n.parameters()]
        self.opt_g = torch.optim.Adam(g_params, lr=self.hp.lr, betas=ADAM_BETAS, eps=ADAM_EPS)
        self.opt_d = torch.optim.Adam(nets.discriminator.parameters(), lr=self.hp.lr, betas=ADAM_BETAS, eps=ADAM_EPS)

    @property
    def steps_per_epoch(self) -> int:
        return max(1, math.ceil(len(self.dataset) / self.hp.batch))

    @property
    def epoch(self) -> int:
        """1-based epoch of the next step."""
        return self.step // self.steps_per_epoch + 1

    def total_steps(self) -> int:
        return self.cfg.steps or self.hp.epochs * self.steps_per_epoch

    def _set_lr(self) -> float:
        lr = self.hp.lr_at_epoch(self.epoch)
        for opt in (self.opt_g, self.opt_d):
            for group in opt.param_groups:
                group["lr"] = lr
        return lr

    def _sample(self):
        b = self.hp.batch
        idx = torch.randint(len(self.dataset), (b,), generator=self.rng)
        k = torch.randint(len(self.nets.groups), (b,), generator=self.rng)
        n1 = torch.randn(b, NOISE_DIM, generator=self.rng)
        n2 = torch.randn(b, NOISE_DIM, generator=self.rng)
        return idx, k, n1, n2

    def train_step(self) -> dict[str, float]:
        lr, epoch = self._set_lr(), self.epoch
        row = self._step()
        self.step += 1
        return {"step": self.step, "epoch": epoch, "lr": lr, **row}

    def _step(self) -> dict[str, float]:
        raise NotImplementedError

    # checkpointing --------------------------------------------------------

    def state(self) -> dict:
        return {
            "step": self.step,
            "rng": self.rng.get_state(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
        }

    def save(self, directory) -> Path:
        meta = {"step": self.step, "epoch": self.epoch, "seed": self.cfg.seed, "config": self.cfg.to_flat()}
        return save_checkpoint(directory, self.nets, extra_state=self.state(), meta=meta)

    def restore(self, directory) -> None:
        nets, _, state = load_checkpoint(directory, expect=self.kind)
        for name in ("mapper", "generator", "predictor", "discriminator"):
            getattr(self.nets, name).load_state_dict(getattr(nets, name).state_dict())
        if state is None:
            raise ValueError(f"{directory} has no trainer state to resume from")
        self.step = state["step"]
        self.rng.set_state(state["rng"])
        self.opt_g.load_state_dict(state["opt_g"])
        self.opt_d.load_state_dict(state["opt_d"])
        self._restore_extra(nets)

    def _restore_extra(self, nets) -> None:
        pass

    def run(self, out_dir, steps: int | None = None) -> list[dict[str, float]]:
        """Train for ``steps`` (default: the configured total minus steps done),
        logging every step to ``train_log.csv`` and checkpointing per config."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.cfg.save(out / "config.toml")
        n = self.total_steps() - self.step if steps is None else steps
        rows = []
        every = self.cfg.checkpoint_every
        with open(out / "train_log.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["step", "epoch", "lr", *self.log_fields])
            writer.writeheader()
            for _ in range(n):
                row = self.train_step()
                writer.writerow(row)
                rows.append(row)
                if every and self.step % every == 0:
                    self.save(out / "checkpoints" / f"step_{self.step:06d}")
        self.save(out / "final")
        return rows


class ImageTrainer(_Trainer):
    kind = "img"
    log_fields = (*L.IMG_TERMS, "total", "d_loss", "r1")

    def __init__(self, cfg: RunConfig, dataset: ImageDataset, oracles: OracleSuite, nets: ImageNets | None = None):
        nets = nets or ImageNets.build(cfg.trainable_groups, cfg.resolution, cfg.seed)
        super().__init__(cfg, nets, dataset)
        self.oracles = oracles

    def _step(self) -> dict[str, float]:
        nets, o = self.nets, self.oracles
        idx, k, n1, n2 = self._sample()
        x = self.dataset.images[idx]
        gs = self.dataset.groups[idx]
        rows = torch.arange(len(idx))

        # discriminator
        with torch.no_grad():
            y_fake = nets.generator(x, nets.mapper(n1)[rows, k])
        x_req = x.clone().requires_grad_(True)
        real_logit = nets.discriminator(x_req)[rows, gs]
        fake_logit = nets.discriminator(y_fake)[rows, k]
        d_adv, _ = L.adversarial_losses(real_logit, fake_logit)
        r1 = L.r1_penalty(real_logit, x_req, self.cfg.r1_weight)
        d_total = d_adv + r1
        if not torch.isfinite(d_total):
            raise L.NonFiniteLossError("d_loss", float(d_total))
        self.opt_d.zero_grad(set_to_none=True)
        d_total.backward()
        self.opt_d.step()

        # mapper + generator + predictor
        nets.discriminator.requires_grad_(False)
        try:
            u1 = nets.mapper(n1)[rows, k]
            u2 = nets.mapper(n2)[rows, k]
            y1 = nets.generator(x, u1)
            y2 = nets.generator(x, u2)
            _, adv = L.adversarial_losses(real_logit.detach(), nets.discriminator(y1)[rows, k])
            rec = nets.generator(y1, nets.predictor.head(x, gs))
            parts = {
                "adv": adv,
                "div": L.diversity_loss(y1, y2),
                "age": L.age_code_loss(nets.predictor.head(y1, k), u1),
                "cyc": L.cycle_loss(x, rec),
                "rac": L.race_consistency_loss(o.race_estimator(x), o.race_estimator(y1)),
                "ppc": L.perceptual_loss(o.perceptual_extractor(x), o.perceptual_extractor(rec)),
                "idc": L.identity_feature_loss(o.identity_embedder(x), o.identity_embedder(y1)),
            }
            report = L.total_image_loss(parts, self.hp, self.cfg.div_clamp)
            report.check_finite()
            self.opt_g.zero_grad(set_to_none=True)
            report.total.backward()
            self.opt_g.step()
        finally:
            nets.discriminator.requires_grad_(True)
        return {**report.row(), "d_loss": float(d_adv.detach()), "r1": float(r1.detach())}


class LandmarkTrainer(_Trainer):
    kind = "lmk"
    log_fields = (*L.LMK_TERMS, "total", "d_loss", "pcc_skipped")

    def __init__(self, cfg: RunConfig, dataset: LandmarkDataset, pca: PcaBasis | None = None,
                 nets: LandmarkNets | None = None):
        groups = cfg.trainable_groups
        if nets is None:
            pca = pca or fit_pca(dataset.landmarks)
            nets = LandmarkNets.build(groups, pca, dataset.group_means(len(groups)), cfg.seed,
                                      cfg.min_ref_separation)
        super().__init__(cfg, nets, dataset)
        self._tensors()

    def _tensors(self):
        nets = self.nets
        self.lmk = torch.as_tensor(self.dataset.landmarks, dtype=torch.float32)
        self.grp = torch.as_tensor(self.dataset.groups)
        self.means = torch.as_tensor(nets.group_means, dtype=torch.float32)
        self.ref = torch.as_tensor(nets.reference.points, dtype=torch.float32)
        self.subset = torch.as_tensor(nets.subset)

    def _restore_extra(self, nets) -> None:
        self.nets.pca, self.nets.reference = nets.pca, nets.reference
        self.nets.group_means, self.nets.subset = nets.group_means, nets.subset
        self._tensors()

    def _pose(self, flat: torch.Tensor) -> torch.Tensor:
        pts = flat.view(-1, NUM_LANDMARKS, 2)[:, self.subset]
        return pose_params(pts, self.ref)

    def _step(self) -> dict[str, float]:
        nets = self.nets
        idx, k, n1, n2 = self._sample()
        l_x = self.lmk[idx]
        gs = self.grp[idx]
        rows = torch.arange(len(idx))
        c_x = nets.pca.project_t(l_x)

        with torch.no_grad():
            c_fake = nets.generator(c_x, nets.mapper(n1)[rows, k])
        real_p = nets.discriminator(c_x)[rows, gs]
        fake_p = nets.discriminator(c_fake)[rows, k]
        d_loss, _ = L.bce_adversarial_losses(real_p, fake_p)
        if not torch.isfinite(d_loss):
            raise L.NonFiniteLossError("d_loss", float(d_loss))
        self.opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        self.opt_d.step()

        nets.discriminator.requires_grad_(False)
        try:
            u1 = nets.mapper(n1)[rows, k]
            u2 = nets.mapper(n2)[rows, k]
            c_y1 = nets.generator(c_x, u1)
            c_y2 = nets.generator(c_x, u2)
            adv = F.binary_cross_entropy(nets.discriminator(c_y1)[rows, k], torch.ones(len(idx)))
            c_rec = nets.generator(c_y1, nets.predictor.head(c_x, gs))
            l_y = nets.pca.reconstruct_t(c_y1)
            pcc, skipped = L.personal_characteristic_loss(l_x, l_y, self.means[gs], self.means[k],
                                                          return_skipped=True)
            parts = {
                "adv": adv,
                "div": L.diversity_loss(c_y1, c_y2),
                "age": L.age_code_loss(nets.predictor.head(c_y1, k), u1),
                "cyc": L.cycle_loss(c_x, c_rec),
                "pos": L.pose_consistency_loss(self._pose(l_x), self._pose(l_y)),
                "pcc": pcc,
            }
            report = L.total_landmark_loss(parts, self.hp, self.cfg.div_clamp)
            report.check_finite()
            self.opt_g.zero_grad(set_to_none=True)
            report.total.backward()
            self.opt_g.step()
        finally:
            nets.discriminator.requires_grad_(True)
        return {**report.row(), "d_loss": float(d_loss.detach()), "pcc_skipped": skipped}


def train_img(dataset: ImageDataset, cfg: RunConfig, oracles: OracleSuite, out_dir, resume=None) -> ImageTrainer:
    trainer = ImageTrainer(cfg, dataset, oracles)
    if resume:
        trainer.restore(resume)
    trainer.run(out_dir)
    return trainer


def train_lmk(dataset: LandmarkDataset, cfg: RunConfig, out_dir, pca: PcaBasis | None = None,
              resume=None) -> LandmarkTrainer:
    trainer = LandmarkTrainer(cfg, dataset, pca)
    if resume:
        trainer.restore(resume)
    trainer.run(out_dir)
    return trainer
