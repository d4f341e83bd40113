"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``criterion N PASS|FAIL`` line with its runtime; the same
lines are collected into a summary section at the end of the pytest run.
"""

import time
from contextlib import contextmanager
from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg

from conftest import ACCEPTANCE, random_proper_rotation
from equimesh.autodiff import Tensor, gradcheck, softmax
from equimesh.checks import INVARIANCE_CONDITIONS, fixture_sample, invariance_check, model_gradcheck, tiny_mesh
from equimesh.cli import main
from equimesh.features import FeatureConfig, dental_frame_cylindrical, liver_frame_cylindrical
from equimesh.mesh import random_rotation, reflection_x, rigid_transform
from equimesh.model import PARAM_BUDGET, EMNNLayer, Model, VNLayer, make_batch, shipped_config, shipped_configs
from equimesh.objectives import (
    boundary_contrast_loss,
    continuity_loss,
    diversity_loss,
    equal_mass_loss,
    prediction_loss,
    sra_reg_terms,
    vn_reg_loss,
)
from equimesh.pipeline import make_sample
from equimesh.spectral import assemble_lb, eig_smallest, hks
from equimesh.synth import ellipsoid, icosphere_cap, tetrahedron, torus, tube_arch
from equimesh.train_eval import (
    TrainConfig,
    class_scores,
    distance_metrics,
    evaluate,
    perturbation_suite,
    set_scores,
    train_loop,
)


@contextmanager
def criterion(n, title, limit):
    """Time the body, then record and print a PASS/FAIL line (the runtime limit is part of the verdict)."""
    info = {"detail": ""}
    t0 = time.perf_counter()
    ok = False
    try:
        yield info
        ok = True
    finally:
        secs = time.perf_counter() - t0
        within = secs < limit
        passed = ok and within
        detail = info["detail"] + ("" if within else f" runtime {secs:.0f}s exceeds {limit}s")
        ACCEPTANCE.append((n, title, passed, secs, detail.strip()))
        print(f"criterion {n} {'PASS' if passed else 'FAIL'} ({secs:.1f}s) {title} {detail.strip()}")
    assert within, f"criterion {n} took {secs:.0f}s, limit {limit}s"


# -- 1 ------------------------------------------------------------------------------


def test_c1_exact_invariance():
    with criterion(1, "exact rigid invariance on 20 fixtures", 120) as info:
        samples = [fixture_sample("intra", seed=s) for s in range(20)]
        random_model = Model(shipped_config("intra"), seed=0)
        trained = Model(shipped_config("intra"), seed=1)
        train_loop(trained, samples[:4], TrainConfig(epochs=3, batch_size=4, seed=1))
        worst = 0.0
        for model in (random_model, trained):
            rep = invariance_check(model, samples, INVARIANCE_CONDITIONS, seed=3)
            assert all(rep.argmax_identical.values()), rep.argmax_identical
            assert rep.worst < 1e-9, rep.max_logit_dev
            worst = max(worst, rep.worst)
        info["detail"] = f"max logit deviation {worst:.1e}"


# -- 2 ------------------------------------------------------------------------------


def _move(X, R, t):
    out = X @ R.T
    out[:, 0, :] += t
    return out


def test_c2_layer_equivariance():
    with criterion(2, "EMNN and VN layer equivariance, 100 draws each", 60) as info:
        s = make_sample(tiny_mesh(), FeatureConfig.preset("intra"))
        batch = make_batch([s.features])
        rewound = replace(batch, faces=batch.faces[:, [0, 2, 1]], _cache={})
        rng = np.random.default_rng(0)
        H = 128
        emnn = EMNNLayer(H, H, 3, 2, rng)
        vn = VNLayer(H, H, 3, 2, rng)
        worst = 0.0
        for draw in range(100):
            h = rng.normal(size=(batch.n_nodes, H))
            X = batch.coords + 0.1 * rng.normal(size=batch.coords.shape)
            reflect = draw % 2 == 1
            R = random_proper_rotation(rng) @ (reflection_x() if reflect else np.eye(3))
            t = rng.uniform(-5, 5, 3)
            moved_batch = rewound if reflect else batch
            h1, X1 = emnn(Tensor(h), Tensor(X), batch)
            h2, X2 = emnn(Tensor(h), Tensor(_move(X, R, t)), moved_batch)
            dev = max(np.abs(h1.data - h2.data).max(), np.abs(_move(X1.data, R, t) - X2.data).max())
            v, u = rng.normal(size=(4, H)), rng.normal(size=(4, 3))
            a = vn(Tensor(h), Tensor(X), Tensor(v), Tensor(u), batch)
            b = vn(Tensor(h), Tensor(_move(X, R, t)), Tensor(v), Tensor(u @ R.T + t), moved_batch)
            dev = max(
                dev,
                np.abs(a[0].data - b[0].data).max(),
                np.abs(_move(a[1].data, R, t) - b[1].data).max(),
                np.abs(a[2].data - b[2].data).max(),
                np.abs(a[3].data @ R.T + t - b[3].data).max(),
            )
            assert dev < 1e-9, (draw, dev)
            worst = max(worst, dev)
        info["detail"] = f"max deviation {worst:.1e}"


# -- 3 ------------------------------------------------------------------------------


def test_c3_full_model_gradcheck():
    with criterion(3, "full-model gradcheck, base/sra/vn", 300) as info:
        assert tiny_mesh().n_vertices <= 30
        worst = {}
        for variant in ("base", "sra", "vn"):
            rep = model_gradcheck("intra", variant, seed=0, max_coords=4)
            worst[variant] = rep.worst
            assert len(rep.per_block) == len(list(Model(shipped_config("intra", variant)).named_parameters()))
        assert max(worst.values()) < 1e-4, worst
        info["detail"] = " ".join(f"{k} {v:.1e}" for k, v in worst.items())


# -- 4 ------------------------------------------------------------------------------


def test_c4_spectral_oracle():
    with criterion(4, "Lanczos vs dense eigensolver, HKS invariance, tetrahedron", 120) as info:
        fixtures = [
            icosphere_cap(level=2, bulge=0.2, noise=0.05, random_axis=True, seed=1),
            ellipsoid(level=2, seed=2),
            tube_arch(n_along=24, n_around=10, noise=0.003, seed=3),
            torus(n_major=16, n_minor=8),
        ]
        worst = 0.0
        for m in fixtures:
            assert m.n_vertices <= 300
            lb = assemble_lb(m)
            basis = eig_smallest(lb, k=32, tol=1e-12, dense_threshold=0)
            dense = scipy.linalg.eigh(lb.stiffness.toarray(), np.diag(lb.mass), eigvals_only=True)[: basis.k]
            # the null mode is compared absolutely, the rest relatively
            assert abs(basis.eigenvalues[0] - dense[0]) < 1e-9
            rel = np.abs(basis.eigenvalues[1:] - dense[1:]) / np.abs(dense[1:])
            assert rel.max() < 1e-7, rel.max()
            worst = max(worst, rel.max())
        tol = 1e-8
        rng = np.random.default_rng(0)
        m = fixtures[0]
        h0 = hks(eig_smallest(assemble_lb(m), k=32, tol=tol))
        for reflect in (False, True):
            R = random_rotation(rng) @ (reflection_x() if reflect else np.eye(3))
            moved = rigid_transform(m, R, rng.normal(size=3))
            assert np.abs(hks(eig_smallest(assemble_lb(moved), k=32, tol=tol)) - h0).max() < 10 * tol
        H = hks(eig_smallest(assemble_lb(tetrahedron()), k=3), normalize=False)
        assert np.abs(H - H[0]).max() < 1e-9
        info["detail"] = f"max relative eigenvalue error {worst:.1e}"


# -- 5 ------------------------------------------------------------------------------


def test_c5_frame_invariance():
    with criterion(5, "dental and liver frames under 100 rigid motions, chirality", 60) as info:
        rng = np.random.default_rng(0)
        arch = tube_arch(noise=0.003, seed=1)
        liver = ellipsoid(level=3, seed=1)
        d0, l0 = dental_frame_cylindrical(arch), liver_frame_cylindrical(liver)
        worst = 0.0
        for _ in range(100):
            R, t = random_proper_rotation(rng), rng.uniform(-5, 5, 3)
            dev = max(
                np.abs(dental_frame_cylindrical(rigid_transform(arch, R, t)) - d0).max(),
                np.abs(liver_frame_cylindrical(rigid_transform(liver, R, t)) - l0).max(),
            )
            assert dev < 1e-6
            worst = max(worst, dev)
        mirrored = dental_frame_cylindrical(rigid_transform(arch, reflection_x()))
        theta_gap = np.abs(mirrored[:, 1] - d0[:, 1]).max()
        assert theta_gap > 1e-3
        info["detail"] = f"max deviation {worst:.1e}, reflected theta gap {theta_gap:.2f}"


# -- 6 ------------------------------------------------------------------------------


def test_c6_loss_identities():
    with criterion(6, "loss identities and gradients", 60) as info:
        rng = np.random.default_rng(0)
        assert equal_mass_loss(Tensor(np.full((30, 5), 0.2))).item() < 1e-12
        block = np.zeros((30, 3))
        block[np.arange(30), np.arange(30) // 10] = 1.0
        assert equal_mass_loss(Tensor(block)).item() < 1e-12
        assert diversity_loss(Tensor(rng.uniform(0.1, 1, size=(20, 1)))).item() < 1e-12
        assert diversity_loss(Tensor(block)).item() < 1e-12

        worst_vn = 0.0
        for _ in range(50):
            u, x = rng.normal(size=(8, 3)), rng.normal(size=(60, 3))
            R = random_proper_rotation(rng) @ (reflection_x() if rng.random() < 0.5 else np.eye(3))
            t = rng.uniform(-5, 5, 3)
            dev = abs(vn_reg_loss(Tensor(u), x).item() - vn_reg_loss(Tensor(u @ R.T + t), x @ R.T + t).item())
            worst_vn = max(worst_vn, dev)
        assert worst_vn < 1e-12

        z = rng.normal(size=(6, 3))
        pairs = [[0, 1], [1, 2], [3, 4]]
        same = z.copy()
        same[1] = same[0]
        same[2] = same[0]
        same[4] = same[3]
        assert continuity_loss(Tensor(same), pairs).item() == 0.0
        assert continuity_loss(Tensor(z), pairs).item() > 0.0

        def T(a):
            return Tensor(a, requires_grad=True)

        labels = rng.integers(0, 3, 10)
        surface = rng.normal(size=(12, 3))
        ring = np.array([[i, (i + 1) % 10] for i in range(10)])
        errs = [
            gradcheck(lambda a: prediction_loss(a, labels), [T(rng.normal(size=(10, 3)))]),
            gradcheck(lambda a: boundary_contrast_loss(a, labels, ring), [T(rng.normal(size=(10, 4)))]),
            gradcheck(lambda a: sum(sra_reg_terms(softmax(a, axis=1)), Tensor(0.0)), [T(rng.normal(size=(10, 4)))]),
            gradcheck(lambda a: vn_reg_loss(a, surface, sigma=0.5), [T(rng.normal(size=(4, 3)))]),
            gradcheck(lambda a: continuity_loss(a, ring), [T(rng.normal(size=(10, 3)))]),
        ]
        assert max(errs) < 1e-5, errs
        info["detail"] = f"vn invariance {worst_vn:.1e}, worst gradient error {max(errs):.1e}"


# -- 7 ------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def cap_split():
    fc = FeatureConfig.preset("intra")
    samples = [
        make_sample(icosphere_cap(level=2, cap_angle=45.0, bulge=0.15, noise=0.01, random_axis=True, seed=s), fc, mesh_id=f"cap{s}")
        for s in range(20)
    ]
    return samples[:16], samples[16:]


def _learn(variant, split):
    train, test = split
    model = Model(shipped_config("intra", variant), seed=0)
    t0 = time.perf_counter()
    train_loop(model, train, TrainConfig(epochs=200, batch_size=8, seed=0))
    secs = time.perf_counter() - t0
    report, _, _ = evaluate(model, test)
    suite = perturbation_suite(model, test)
    return report.class_iou[1], secs, suite


def test_c7_learnability(cap_split):
    with criterion(7, "cap learnability, 200 epochs, base/sra/vn", 3 * 900) as info:
        results = {v: _learn(v, cap_split) for v in ("base", "sra", "vn")}
        base_iou, base_secs, _ = results["base"]
        info["detail"] = " ".join(f"{v} IoU {r[0]:.4f} in {r[1]:.0f}s" for v, r in results.items())
        assert base_secs < 900, f"base run took {base_secs:.0f}s"
        for variant, (iou, _, suite) in results.items():
            assert iou >= 0.95, (variant, iou)
            assert iou >= base_iou - 0.01, (variant, iou, base_iou)
            base_report = suite.reports["baseline"]
            for name in ("rot_z15", "rot_z40"):
                row = next(r for r in suite.rows() if r["condition"] == name)
                assert row["argmax_identical"], (variant, name)
                assert suite.reports[name].class_iou == base_report.class_iou


# -- 8 ------------------------------------------------------------------------------


def test_c8_parameter_budget():
    with criterion(8, "parameter budget", 60) as info:
        counts = {name: Model(cfg).n_parameters() for name, cfg in shipped_configs().items()}
        assert len(counts) == 12
        assert max(counts.values()) < PARAM_BUDGET, counts
        info["detail"] = f"largest {max(counts, key=counts.get)} with {max(counts.values())}"


# -- 9 ------------------------------------------------------------------------------


def _brute_distances(P, T):
    dpt = [min(np.sqrt(((p - q) ** 2).sum()) for q in T) for p in P]
    dtp = [min(np.sqrt(((p - q) ** 2).sum()) for p in P) for q in T]
    return 100.0 * 0.5 * (np.mean(dpt) + np.mean(dtp)), max(max(dpt), max(dtp))


def test_c9_metric_oracles():
    with criterion(9, "Dice/IoU/Chamfer/Hausdorff vs brute force", 60) as info:
        rng = np.random.default_rng(0)
        worst = 0.0
        for trial in range(10):
            n = int(rng.integers(20, 201))
            p, t = rng.integers(0, 5, n), rng.integers(0, 5, n)
            for c, (dice, iou) in class_scores(p, t).items():
                od, oi = set_scores(set(np.flatnonzero(p == c)), set(np.flatnonzero(t == c)))
                worst = max(worst, abs(dice - od), abs(iou - oi))
            P, T = rng.normal(size=(int(rng.integers(1, 200)), 3)), rng.normal(size=(int(rng.integers(1, 200)), 3))
            cd, hd = distance_metrics(P, T)
            ocd, ohd = _brute_distances(P, T)
            worst = max(worst, abs(cd - ocd), abs(hd - ohd))
        assert worst < 1e-12
        cd, hd = distance_metrics([[0.0, 0, 0]], [[1.0, 0, 0]])
        assert cd == 100.0 and hd == 1.0
        info["detail"] = f"max deviation {worst:.1e}"


# -- 10 -----------------------------------------------------------------------------


def _pipeline(root):
    raw, prepared, feats, run, ev = (root / d for d in ("raw", "prepared", "features", "run", "eval"))
    common = ["--seed", "11", "--deterministic"]
    steps = [
        ["synth", "icosphere_cap", "--count", "6", "--level", "2", "--cap-angle", "45", "--bulge", "0.15",
         "--noise", "0.01", "--random-axis", "--manifest", "--out", str(raw)],
        ["preprocess", str(raw / "manifest.json"), "--out", str(prepared)],
        ["featurize", str(prepared), "--out", str(feats)],
        ["train", str(feats), "--out", str(run), "--epochs", "5", "--batch-size", "3", "--config", "intra"],
        ["eval", str(run), str(feats), "--out", str(ev)],
    ]
    for argv in steps:
        assert main(argv + common) == 0, argv
    return {p.name: p.read_bytes() for p in sorted(ev.glob("*.csv"))}


def test_c10_pipeline_determinism(tmp_path):
    with criterion(10, "CLI pipeline twice gives byte-identical metric CSVs", 600) as info:
        first = _pipeline(tmp_path / "a")
        second = _pipeline(tmp_path / "b")
        assert set(first) == {"metrics.csv", "class_metrics.csv", "mesh_metrics.csv"}
        assert first == second
        info["detail"] = f"{len(first)} CSV files compared"
