"""Acceptance criteria 1-12, one test (or group of tests) per criterion.

Each criterion's outcome is collected in ``RESULTS`` and printed as a single
PASS/FAIL line in the terminal summary.
"""
import contextlib
import csv
import json
import math
import shutil
import time

import numpy as np
import pytest
import torch

from dlat import losses as L
from dlat.cli import run
from dlat.datamodel import ALL_GROUPS, AgeGroup, HyperParams, Modality, RunConfig, SimilarityTable
from dlat.fixtures import TOY_GROUPS
from dlat.fusion import apply_warp, estimate_warp, invert_affine
from dlat.imgnet import ImageDiscriminator, ImageGenerator, ImagePredictor, ModulatedConv2d
from dlat.lmknet import (
    POSE_SUBSET,
    LandmarkDiscriminator,
    LandmarkGenerator,
    LandmarkPredictor,
    ReferencePoints3D,
    estimate_pose,
    fit_pca,
    pose_params,
)
from dlat.mapper import AgeMapper
from dlat.metrics import EvalRecord, age_mae, idag, pairwise_diversity
from dlat.models import load_checkpoint, save_checkpoint
from dlat.oracles import MockEmbedder, MockPerceptual, MockRaceEstimator, perceptual_distance
from dlat.train import ImageDataset
from reference import (
    affine_normal_equations,
    central_difference,
    diversity_brute,
    idag_brute,
    mae_brute,
    pca_oracle,
    psnr,
    random_rotation,
    raw_table,
    rel_err,
)

RESULTS: dict[int, tuple[str, bool]] = {}
LABELS = [g.bounds_str for g in ALL_GROUPS]


@contextlib.contextmanager
def criterion(n: int, title: str):
    ok = RESULTS.get(n, (title, True))[1]
    RESULTS[n] = (title, False)
    yield
    RESULTS[n] = (title, ok)


def _table_path(toy):
    return toy.parent / "similarity_table.csv"


# 1 ------------------------------------------------------------------------

def test_c01_idag_matches_brute_force(toy, tmp_path):
    with criterion(1, "eval idag == brute force on 50 random manifests (1e-9, < 10 s)"):
        rng = np.random.default_rng(101)
        table = raw_table(_table_path(toy))
        start = time.perf_counter()
        for trial in range(50):
            n, m = int(rng.integers(1, 21)), int(rng.integers(1, 11))
            targets = rng.choice(10, m, replace=False)
            rows = []
            for s in range(n):
                sg = LABELS[rng.integers(10)]
                for t in targets:
                    rows.append((f"src{s}.png", sg, LABELS[t], f"syn{s}_{t}.png", f"{rng.uniform(0, 100):.10f}"))
            rng.shuffle(rows)
            manifest = tmp_path / f"m{trial}.csv"
            with open(manifest, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["source", "source_group", "target_group", "synthesis", "similarity"])
                w.writerows(rows)
            out = tmp_path / f"r{trial}.json"
            assert run(["eval", "idag", "--manifest", str(manifest), "--out", str(out)]) == 0
            report = json.loads(out.read_text())
            assert report["N"] == n and report["M"] == m
            expected = idag_brute([(r[1], r[2], r[4]) for r in rows], table)
            assert abs(report["idag"] - expected) <= 1e-9
        assert time.perf_counter() - start < 10


# 2 ------------------------------------------------------------------------

def test_c02_idag_worked_example():
    with criterion(2, "IDAG worked example = 8.395 (1e-9)"):
        table = SimilarityTable.bundled()
        a = AgeGroup.parse("0-2")
        recs = [EvalRecord.from_table("x", a, AgeGroup.parse(t), s, table) for t, s in (("3-6", 75.0), ("7-9", 60.0))]
        assert recs[0].table_mean == pytest.approx(80.24, abs=1e-12)
        assert recs[1].table_mean == pytest.approx(71.55, abs=1e-12)
        assert abs(idag(recs, 1, 2) - 8.395) <= 1e-9


# 3 ------------------------------------------------------------------------

def test_c03_bundled_table_invariants():
    with criterion(3, "bundled similarity table: symmetry, diagonal, monotone decay, spot values"):
        t = SimilarityTable.bundled()
        v = t.values
        assert np.array_equal(v, v.T)
        assert np.all(np.diag(v) == 100)
        assert v[0, 1] == pytest.approx(80.24, abs=1e-9)
        assert v[8, 9] == pytest.approx(84.17, abs=1e-9)
        violations = [(r, j, j + 1) for r in range(10) for j in range(r, 9) if v[r, j + 1] > v[r, j]]
        violations += [(r, j, j - 1) for r in range(10) for j in range(1, r + 1) if v[r, j - 1] > v[r, j]]
        assert not violations, f"values rise with age gap at (row, near, far) = {violations}"


# 4 ------------------------------------------------------------------------

TRIALS = 20


def _fd_check(f, x0, coords=None):
    x = torch.as_tensor(x0).clone().requires_grad_(True)
    f(x).backward()
    grad = x.grad.numpy().ravel()

    def f_np(v):
        with torch.no_grad():
            return float(f(torch.as_tensor(v)))

    if coords is None:
        fd = central_difference(f_np, x0).ravel()
        return rel_err(grad, fd)
    flat = x0.ravel()
    fd = []
    for i in coords:
        e = np.zeros_like(flat)
        e[i] = 1e-6
        fd.append((f_np((flat + e).reshape(x0.shape)) - f_np((flat - e).reshape(x0.shape))) / 2e-6)
    return rel_err(grad[coords], np.array(fd))


def _image_total_parts(y1, fixed):
    x, y2, w_adv, w_age, u, perc, race, embed = fixed
    feat = y1.flatten(1)
    return {
        "adv": L.adversarial_losses(torch.zeros(1, dtype=y1.dtype), feat @ w_adv)[1],
        "div": L.diversity_loss(y1, y2),
        "age": L.age_code_loss(torch.tanh(feat @ w_age), u),
        "cyc": L.cycle_loss(x, 0.5 * y1 + 0.5 * x.flip(-1)),
        "rac": L.race_consistency_loss(race(x), race(y1)),
        "ppc": L.perceptual_loss(perc(x), perc(y1)),
        "idc": L.identity_feature_loss(embed(x), embed(y1)),
    }


def test_c04_loss_gradients():
    with criterion(4, "loss gradients == central differences (double, >= 20 trials each, rel <= 1e-4, < 60 s)"):
        rng = np.random.default_rng(404)
        start = time.perf_counter()
        hp = HyperParams()
        dbl = torch.float64
        perc, race, embed = MockPerceptual(), MockRaceEstimator(0, 7), MockEmbedder(0, 64)
        ref = torch.as_tensor(ReferencePoints3D.sample(rng).points)
        pca = fit_pca(rng.standard_normal((80, 162)) * 3 + 30)
        errs = {}

        def record(name, e):
            errs.setdefault(name, []).append(e)

        for _ in range(TRIALS):
            a, b = rng.standard_normal((2, 3, 6, 6)), rng.standard_normal((2, 3, 6, 6))
            record("diversity", _fd_check(lambda y: L.diversity_loss(y, torch.as_tensor(b)), a))
            u = rng.standard_normal((3, 16))
            record("age code", _fd_check(lambda p: L.age_code_loss(p, torch.as_tensor(u)), rng.standard_normal((3, 16))))
            r = torch.as_tensor(rng.standard_normal(4))
            record("adversarial (d)", _fd_check(lambda f: L.adversarial_losses(r, f)[0], rng.standard_normal(4)))
            record("adversarial (g)", _fd_check(lambda f: L.adversarial_losses(r, f)[1], rng.standard_normal(4)))
            record("adversarial (real)", _fd_check(lambda q: L.adversarial_losses(q, r)[0], rng.standard_normal(4)))
            px = pose_params(torch.as_tensor(rng.standard_normal((8, 2)) * 10), ref).detach()
            record("pose", _fd_check(lambda q: L.pose_consistency_loss(px, pose_params(q, ref)),
                                     rng.standard_normal((8, 2)) * 10))
            xc = torch.as_tensor(rng.standard_normal((2, 12)))
            record("cycle", _fd_check(lambda q: L.cycle_loss(xc, q), rng.standard_normal((2, 12))))
            img = torch.as_tensor(rng.uniform(-1, 1, (1, 3, 16, 16)))
            record("perceptual", _fd_check(lambda q: L.perceptual_loss(perc(img), perc(q)),
                                           rng.uniform(-1, 1, (1, 3, 16, 16)), rng.choice(768, 48, replace=False)))
            e = torch.as_tensor(rng.standard_normal((2, 32)))
            record("identity", _fd_check(lambda q: L.identity_feature_loss(e, q), rng.standard_normal((2, 32))))
            lx, ms, mt = (torch.as_tensor(rng.standard_normal(162)) for _ in range(3))
            record("pcc", _fd_check(lambda q: L.personal_characteristic_loss(lx, q, ms, mt), rng.standard_normal(162)))

            x = torch.as_tensor(rng.uniform(-1, 1, (1, 3, 16, 16)))
            y1 = rng.uniform(-1, 1, (1, 3, 16, 16))
            y2 = torch.as_tensor(np.clip(y1 + rng.normal(0, 0.3, y1.shape), -1, 1))
            fixed = (x, y2, torch.as_tensor(rng.standard_normal(768) / 30), torch.as_tensor(rng.standard_normal((768, 8)) / 30),
                     torch.as_tensor(rng.uniform(-1, 1, (1, 8))), perc, race, embed)
            record("image total", _fd_check(lambda q: L.total_image_loss(_image_total_parts(q, fixed), hp).total, y1,
                                            rng.choice(768, 64, replace=False)))

            c_x = torch.as_tensor(rng.standard_normal(32) * 3)
            c_y2 = torch.as_tensor(rng.standard_normal(32) * 3)
            w = torch.as_tensor(rng.standard_normal(32) / 10)
            a_map = torch.as_tensor(rng.standard_normal((32, 8)) / 5)
            u8 = torch.as_tensor(rng.standard_normal(8))
            l_x = pca.reconstruct_t(c_x[None])[0]
            m_s, m_t = (torch.as_tensor(rng.standard_normal(162) + 30) for _ in range(2))
            sub = list(POSE_SUBSET)

            def lmk_total(c):
                l_y = pca.reconstruct_t(c[None])[0]
                parts = {
                    "adv": torch.nn.functional.binary_cross_entropy(torch.sigmoid(c @ w), torch.ones((), dtype=dbl)),
                    "div": L.diversity_loss(c, c_y2) / 10,
                    "age": L.age_code_loss(c @ a_map, u8),
                    "cyc": L.cycle_loss(c_x, 0.5 * c + 0.5 * c_y2),
                    "pos": L.pose_consistency_loss(pose_params(l_x.view(81, 2)[sub], ref),
                                                   pose_params(l_y.view(81, 2)[sub], ref)),
                    "pcc": L.personal_characteristic_loss(l_x, l_y, m_s, m_t),
                }
                return L.total_landmark_loss(parts, hp).total

            record("landmark total", _fd_check(lmk_total, rng.standard_normal(32) * 3))

        worst = {k: max(v) for k, v in errs.items()}
        elapsed = time.perf_counter() - start
        assert all(len(v) >= TRIALS for v in errs.values())
        bad = {k: v for k, v in worst.items() if v > 1e-4}
        assert not bad, f"gradient mismatch: {bad}"
        assert elapsed < 60, f"gradient suite took {elapsed:.1f} s"


# 5 ------------------------------------------------------------------------

def test_c05_pca_properties():
    with criterion(5, "PCA: exact-rank reconstruction, orthonormality, discarded-eigenvalue error"):
        rng = np.random.default_rng(505)
        basis = np.linalg.qr(rng.standard_normal((162, 32)))[0].T
        data = 25 + (rng.standard_normal((150, 32)) * np.linspace(6, 1, 32)) @ basis
        b = fit_pca(data)
        assert np.abs(b.reconstruct(b.project(data)) - data).max() <= 1e-9

        full = rng.standard_normal((300, 162)) * np.linspace(4, 0.5, 162) + 10
        b = fit_pca(full)
        assert np.abs(b.components @ b.components.T - np.eye(32)).max() <= 1e-8
        _, _, evals = pca_oracle(full, 32)
        err = np.mean(np.sum((b.reconstruct(b.project(full)) - full) ** 2, axis=1))
        assert abs(err - evals[32:].sum()) <= 1e-8


# 6 ------------------------------------------------------------------------

def _embed_subset(pts):
    full = np.zeros((81, 2))
    full[list(POSE_SUBSET)] = pts
    return full


def test_c06_pose_recovery():
    with criterion(6, "pose recovery on 100 projections (1e-6), translation equivariance (1e-9)"):
        rng = np.random.default_rng(606)
        ref = ReferencePoints3D.sample(rng)
        for _ in range(100):
            s, rot, t = rng.uniform(0.3, 4), random_rotation(rng), rng.uniform(-50, 50, 2)
            p = estimate_pose(_embed_subset(s * ref.points @ rot[:2].T + t), ref)
            assert abs(p.scale - s) <= 1e-6
            assert np.abs(p.rotation - s * rot[:2]).max() <= 1e-6
            assert np.abs(p.translation - t).max() <= 1e-6
        for _ in range(20):
            pts = _embed_subset(rng.uniform(0, 64, (8, 2)))
            shift = rng.uniform(-30, 30, 2)
            a, b = estimate_pose(pts, ref), estimate_pose(pts + shift, ref)
            assert np.abs(b.rotation - a.rotation).max() <= 1e-9
            assert np.abs(b.translation - a.translation - shift).max() <= 1e-9


# 7 ------------------------------------------------------------------------

def test_c07_warp_suite():
    with criterion(7, "warp: affine recovery (1e-8), exact identity, round-trip PSNR >= 35 dB"):
        rng = np.random.default_rng(707)
        src = rng.uniform(5, 59, (81, 2))
        for _ in range(50):
            a0 = np.column_stack([np.eye(2) + rng.normal(0, 0.15, (2, 2)), rng.normal(0, 4, 2)])
            dst = src @ a0[:, :2].T + a0[:, 2]
            a = estimate_warp(src, dst)
            assert np.abs(a - a0).max() <= 1e-8
            assert np.abs(a - affine_normal_equations(src, dst)).max() <= 1e-8
        img = rng.uniform(-1, 1, (64, 64, 3))
        assert np.array_equal(apply_warp(img, np.eye(2, 3)), img)
        yy, xx = np.mgrid[0:64, 0:64] / 64.0
        smooth = np.stack([np.sin(4 * xx + 2 * yy), np.cos(3 * yy - xx), np.sin(5 * xx * yy)], axis=-1) * 0.9
        for _ in range(10):
            a = np.column_stack([np.eye(2) + rng.normal(0, 0.08, (2, 2)), rng.normal(0, 2, 2)])
            back = apply_warp(apply_warp(smooth, a), invert_affine(a))
            assert psnr(back[12:-12, 12:-12], smooth[12:-12, 12:-12]) >= 35


# 8 ------------------------------------------------------------------------

K = 6


def _weights(module, prefix, skip=("style", "film", "skip")):
    return [tuple(p.shape) for name, p in module.named_parameters()
            if name.startswith(prefix + ".") and name.endswith("weight") and not any(s in name for s in skip)]


def _conv(o, i, k=3):
    return (o, i, k, k)


def test_c08_architecture_audit():
    with criterion(8, "parameter-shape audit of all eight networks at 256-scale"):
        m_img, m_lmk = AgeMapper(K, Modality.IMAGE), AgeMapper(K, Modality.LANDMARK)
        assert _weights(m_img, "shared") == [(512, 16)] + [(512, 512)] * 5
        assert _weights(m_lmk, "shared") == [(512, 16)] + [(512, 512)] * 3
        for k in range(K):
            assert _weights(m_img, f"branches.{k}") == [(512, 512), (256, 512)]
            assert _weights(m_lmk, f"branches.{k}") == [(512, 512)] * 3 + [(64, 512)]

        p_img = ImagePredictor(K, 256)
        widths = [64, 128, 256, 512, 512, 512, 512]
        trunk = [_conv(64, 3, 1)]
        for c_in, c_out in zip(widths, widths[1:]):
            trunk += [_conv(c_out, c_in), _conv(c_out, c_out)]
        trunk.append(_conv(512, 512, 4))
        assert _weights(p_img, "trunk") == trunk
        assert [_weights(p_img, f"heads.{k}") for k in range(K)] == [[(256, 512)]] * K

        p_lmk = LandmarkPredictor(K)
        assert _weights(p_lmk, "trunk") == [(512, 32)] + [(512, 512)] * 9
        assert [_weights(p_lmk, f"heads.{k}") for k in range(K)] == [[(64, 512)]] * K

        g_img = ImageGenerator(256)
        assert _weights(g_img, "encoder") == [_conv(64, 3, 7), _conv(128, 64), _conv(256, 128)] + [_conv(256, 256)] * 10
        assert _weights(g_img, "decoder") == [_conv(256, 256)] * 4 + [_conv(128, 256), _conv(64, 128)]
        assert _weights(g_img, "to_rgb") == [_conv(3, 64, 1)]
        styles = [tuple(p.shape) for n, p in g_img.named_parameters() if n.endswith("style.weight")]
        assert [s[1] for s in styles] == [256] * 6

        g_lmk = LandmarkGenerator()
        assert _weights(g_lmk, "layers") == [(256, 32)] + [(256, 256)] * 7
        assert _weights(g_lmk, "layers", skip=("linear",)) == [(512, 64)] * 8
        assert _weights(g_lmk, "out") == [(32, 256)]

        d_img = ImageDiscriminator(K, 256)
        assert _weights(d_img, "body") == [_conv(64, 3, 1), _conv(64, 64), _conv(128, 64), _conv(128, 128),
                                           _conv(256, 128), _conv(256, 256), _conv(512, 256)] + [_conv(512, 512)] * 6
        assert _weights(d_img, "final_conv") == [_conv(512, 513)]
        assert _weights(d_img, "out") == [_conv(K, 512, 4)]

        d_lmk = LandmarkDiscriminator(K)
        assert _weights(d_lmk, "trunk") == [(256, 32)] + [(256, 256)] * 3
        for k in range(K):
            assert _weights(d_lmk, f"branches.{k}") == [(256, 256), (256, 256), (128, 256), (1, 128)]
        with torch.no_grad():
            assert d_lmk(torch.randn(2, 32)).shape == (2, K)
            assert p_lmk(torch.randn(2, 32)).shape == (2, K, 64)
            assert g_lmk(torch.randn(2, 32), torch.randn(2, 64)).shape == (2, 32)
            assert m_img(torch.randn(2, 16)).shape == (2, K, 256)
            assert m_lmk(torch.randn(2, 16)).shape == (2, K, 64)


# 9 ------------------------------------------------------------------------

def test_c09_demodulation_invariant():
    with criterion(9, "demodulated filter norms = 1 +- 1e-6"):
        for c_in, c_out, k in ((256, 256, 3), (256, 128, 3), (128, 64, 3), (16, 8, 1)):
            conv = ModulatedConv2d(c_in, c_out, k)
            for _ in range(5):
                w = conv.modulated_weight(torch.randn(4, 256) * float(np.random.default_rng(c_in).uniform(0.1, 10)))
                norms = w.double().pow(2).sum(dim=(2, 3, 4)).sqrt()
                assert (norms - 1).abs().max().item() <= 1e-6


# 10, 11 -------------------------------------------------------------------

def _log_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _train(config, out):
    net = "img" if config.name.startswith("img") else "lmk"
    return run(["train", "--net", net, "--gender", "m", "--config", str(config), "--out", str(out)])


@pytest.fixture(scope="session")
def smoke_runs(toy, tmp_path_factory):
    """Bundled toy configurations trained through the CLI, plus the no-diversity ablation."""
    d = tmp_path_factory.mktemp("smoke")
    shutil.copytree(toy, d / "toy")
    start = time.perf_counter()
    codes = {"img": _train(d / "toy" / "img.toml", d / "img"), "lmk": _train(d / "toy" / "lmk.toml", d / "lmk")}
    elapsed = time.perf_counter() - start
    cfg = RunConfig.load(d / "toy" / "img.toml")
    flat = cfg.to_flat()
    flat["lambda2"] = 0.0
    RunConfig.from_flat(flat).save(d / "toy" / "img_ablated.toml")
    codes["ablated"] = _train(d / "toy" / "img_ablated.toml", d / "ablated")
    return {"dir": d, "codes": codes, "elapsed": elapsed}


def _probe(bundle_a, bundle_b, kind, rng):
    with torch.no_grad():
        n = torch.as_tensor(rng.standard_normal((2, 16)), dtype=torch.float32)
        if kind == "img":
            x = torch.as_tensor(rng.uniform(-1, 1, (2, 3, 64, 64)), dtype=torch.float32)
            outs = lambda b: (b.mapper(n), b.generator(x, b.mapper(n)[:, 1]), b.predictor(x), b.discriminator(x))
        else:
            c = torch.as_tensor(rng.standard_normal((2, 32)), dtype=torch.float32)
            outs = lambda b: (b.mapper(n), b.generator(c, b.mapper(n)[:, 1]), b.predictor(c), b.discriminator(c))
        return all(torch.equal(p, q) for p, q in zip(outs(bundle_a), outs(bundle_b)))


@pytest.mark.parametrize("kind,steps,resume_from", [("img", 200, 100), ("lmk", 500, 250)])
def test_c10_smoke_training(smoke_runs, kind, steps, resume_from, tmp_path):
    with criterion(10, "smoke training: img 200 / lmk 500 steps finite, bit-exact checkpoints, resume determinism"):
        d = smoke_runs["dir"]
        assert smoke_runs["codes"][kind] == 0
        rows = _log_rows(d / kind / "train_log.csv")
        assert len(rows) == steps
        assert all(math.isfinite(float(v)) for r in rows for v in r.values())

        bundle, manifest, _ = load_checkpoint(d / kind, expect=kind)
        assert manifest["step"] == steps
        save_checkpoint(tmp_path / "copy", bundle)
        copy, _, _ = load_checkpoint(tmp_path / "copy", expect=kind)
        assert _probe(bundle, copy, kind, np.random.default_rng(10))

        ck = d / kind / "checkpoints" / f"step_{resume_from:06d}"
        assert run(["train", "--net", kind, "--gender", "m", "--config", str(d / "toy" / f"{kind}.toml"),
                    "--out", str(tmp_path / "resumed"), "--resume", str(ck)]) == 0
        resumed = _log_rows(tmp_path / "resumed" / "train_log.csv")
        assert resumed[:10] == rows[resume_from:resume_from + 10]
        final_resumed, _, _ = load_checkpoint(tmp_path / "resumed", expect=kind)
        assert _probe(bundle, final_resumed, kind, np.random.default_rng(11))


def test_c10_runtime(smoke_runs):
    with criterion(10, "smoke training: img 200 / lmk 500 steps finite, bit-exact checkpoints, resume determinism"):
        assert smoke_runs["elapsed"] < 600, f"training took {smoke_runs['elapsed']:.0f} s"


def _probe_diversity(run_dir, toy, pairs=20):
    nets, _, _ = load_checkpoint(run_dir, expect="img")
    data = ImageDataset.from_dir(toy / "faces", "m", TOY_GROUPS, 64)
    g = torch.Generator().manual_seed(2024)
    vals = []
    with torch.no_grad():
        for i in range(pairs):
            x = data.images[i % len(data)][None]
            k = i % len(nets.groups)
            n1, n2 = torch.randn(1, 16, generator=g), torch.randn(1, 16, generator=g)
            y1 = nets.generator(x, nets.mapper(n1)[:, k])
            y2 = nets.generator(x, nets.mapper(n2)[:, k])
            vals.append(float(L.diversity_loss(y1, y2)))
    return float(np.mean(vals))


def test_c11_diversity_beats_ablation(smoke_runs, toy):
    with criterion(11, "probe diversity of the trained run > run without the diversity term"):
        d = smoke_runs["dir"]
        assert smoke_runs["codes"]["ablated"] == 0
        full, ablated = _probe_diversity(d / "img", toy), _probe_diversity(d / "ablated", toy)
        print(f"probe diversity: trained {full:.6f}, ablated {ablated:.6f}")
        assert full > ablated


# 12 -----------------------------------------------------------------------

def test_c12_metric_oracles():
    with criterion(12, "age_mae and pairwise_diversity == brute force (1e-9)"):
        rng = np.random.default_rng(1212)
        for _ in range(20):
            n = int(rng.integers(1, 60))
            ages = rng.uniform(-5, 110, n)
            idx = rng.integers(0, 10, n)
            assert abs(age_mae(list(ages), [ALL_GROUPS[i] for i in idx]) - mae_brute(ages, idx)) <= 1e-9
        dist = perceptual_distance(MockPerceptual())
        l1 = lambda a, b: float(np.abs(a - b).mean())
        for _ in range(10):
            imgs = [rng.uniform(-1, 1, (16, 16, 3)) for _ in range(int(rng.integers(2, 7)))]
            for f in (dist, l1):
                assert abs(pairwise_diversity(imgs, f) - diversity_brute(imgs, f)) <= 1e-9
