import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_proper_rotation
from equimesh.autodiff import Tensor, gradcheck, softmax
from equimesh.errors import EmptyTargets, MissingPart
from equimesh.objectives import (
    LossWeights,
    boundary_contrast_loss,
    continuity_loss,
    default_sigma,
    diversity_loss,
    equal_mass_loss,
    gaussian_kernel,
    prediction_loss,
    soft_dice,
    sra_reg_terms,
    subsample_indices,
    total_loss,
    vn_reg_loss,
)


def T(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def test_uniform_binary_logits():
    # CE is ln 2; soft Dice of 0.5 against one-hot halves is 1/2 per class
    t = np.array([0, 1, 0, 1])
    loss = prediction_loss(Tensor(np.zeros((4, 2))), t).item()
    assert np.isclose(loss, np.log(2) + 0.5)


def test_soft_dice_disjoint_and_perfect():
    probs = Tensor(np.array([[1.0, 0], [1.0, 0]]))
    assert soft_dice(probs, [1, 1]).item() < 1e-7
    assert np.isclose(soft_dice(probs, [0, 0]).item(), 1.0)


def test_prediction_loss_empty_targets():
    with pytest.raises(EmptyTargets):
        prediction_loss(Tensor(np.zeros((0, 2))), np.zeros(0, dtype=int))


def cbl_oracle(emb, labels, pairs, m=0.3, ms=0.5):
    total, differ = 0.0, False
    for a, b in pairs:
        cos = emb[a] @ emb[b] / (np.sqrt(emb[a] @ emb[a] + 1e-12) * np.sqrt(emb[b] @ emb[b] + 1e-12))
        if labels[a] != labels[b]:
            differ = True
            total += max(0.0, cos - m)
        else:
            total += max(0.0, ms - cos)
    return total / len(pairs) if differ else 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_contrast_matches_pairwise_oracle(seed):
    rng = np.random.default_rng(seed)
    emb = rng.normal(size=(12, 5))
    labels = rng.integers(0, 3, 12)
    pairs = rng.integers(0, 12, size=(30, 2))
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    got = boundary_contrast_loss(Tensor(emb), labels, pairs).item()
    assert abs(got - cbl_oracle(emb, labels, pairs)) < 1e-12


def test_contrast_zero_without_boundary():
    emb = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
    assert boundary_contrast_loss(emb, [1, 1, 1, 1], [[0, 1], [2, 3]]).item() == 0.0


def test_contrast_scale_invariant(rng):
    emb = rng.normal(size=(8, 4))
    labels = [0, 0, 1, 1, 0, 1, 0, 1]
    pairs = np.array([[i, (i + 1) % 8] for i in range(8)])
    a = boundary_contrast_loss(Tensor(emb), labels, pairs).item()
    b = boundary_contrast_loss(Tensor(emb * 7.5), labels, pairs).item()
    assert abs(a - b) < 1e-12


@pytest.mark.parametrize("K", [2, 4, 7])
def test_uniform_assignment_values(K):
    A = Tensor(np.full((40, K), 1.0 / K))
    assert np.isclose(diversity_loss(A).item(), K * (K - 1))
    assert equal_mass_loss(A).item() < 1e-12


def test_balanced_hard_assignment_is_optimal():
    A = np.zeros((12, 3))
    A[np.arange(12), np.arange(12) % 3] = 1.0
    assert diversity_loss(Tensor(A)).item() < 1e-10
    assert equal_mass_loss(Tensor(A)).item() < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 100_000))
def test_sra_terms_row_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    A = rng.dirichlet(np.ones(5), size=30)
    perm = rng.permutation(30)
    a = [t.item() for t in sra_reg_terms(Tensor(A))]
    b = [t.item() for t in sra_reg_terms(Tensor(A[perm]))]
    assert np.allclose(a, b, rtol=1e-12, atol=1e-14)
    assert a[0] >= 0 and a[1] >= 0


def test_sra_terms_average_over_meshes(rng):
    A1, A2 = rng.dirichlet(np.ones(3), size=10), rng.dirichlet(np.ones(3), size=6)
    both = sra_reg_terms(Tensor(np.vstack([A1, A2])), offsets=[0, 10, 16])
    one, two = sra_reg_terms(Tensor(A1)), sra_reg_terms(Tensor(A2))
    assert np.isclose(both[0].item(), (one[0].item() + two[0].item()) / 2)
    assert np.isclose(both[1].item(), (one[1].item() + two[1].item()) / 2)


def test_gaussian_kernel_identities(rng):
    p = rng.normal(size=(5, 3))
    K = gaussian_kernel(Tensor(p), Tensor(p), 0.7).data
    assert np.allclose(np.diag(K), 1.0)
    assert np.allclose(K, K.T)
    assert (K > 0).all() and (K <= 1).all()
    q = p[:1] + np.array([[0.7, 0, 0]])
    assert np.isclose(gaussian_kernel(Tensor(p[:1]), Tensor(q), 0.7).data[0, 0], np.exp(-0.5))


def test_default_sigma():
    x = np.array([[0.0, 0, 0], [2, 0, 0]])
    assert np.isclose(default_sigma(x), 0.2)
    assert default_sigma(np.zeros((3, 3))) == 1.0


def test_subsample_indices(rng):
    assert np.array_equal(subsample_indices(10, 256), np.arange(10))
    idx = subsample_indices(1000, 256, rng)
    assert len(np.unique(idx)) == 256 and idx.max() < 1000


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 100_000), st.booleans())
def test_vn_loss_rigid_invariant(seed, reflect):
    rng = np.random.default_rng(seed)
    u, x = rng.normal(size=(6, 3)), rng.normal(size=(40, 3))
    R = random_proper_rotation(rng) * (-1 if reflect else 1)
    t = rng.uniform(-5, 5, 3)
    a = vn_reg_loss(Tensor(u), x).item()
    b = vn_reg_loss(Tensor(u @ R.T + t), x @ R.T + t).item()
    assert abs(a - b) < 1e-12


def test_vn_loss_single_virtual_node(rng):
    x = rng.normal(size=(10, 3))
    u = x.mean(axis=0, keepdims=True)
    k = gaussian_kernel(Tensor(x), Tensor(u), 0.5).data.mean()
    assert np.isclose(vn_reg_loss(Tensor(u), x, sigma=0.5).item(), -k)


def continuity_oracle(logits, pairs):
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    return np.mean([((p[a] - p[b]) ** 2).sum() for a, b in pairs])


def test_continuity_matches_oracle(rng):
    z = rng.normal(size=(9, 3))
    pairs = rng.integers(0, 9, size=(15, 2))
    assert abs(continuity_loss(Tensor(z), pairs).item() - continuity_oracle(z, pairs)) < 1e-12


def test_continuity_extremes():
    z = np.array([[50.0, -50.0], [-50.0, 50.0]])
    assert np.isclose(continuity_loss(Tensor(z), [[0, 1]]).item(), 2.0)
    assert continuity_loss(Tensor(z), [[0, 0]]).item() == 0.0
    assert continuity_loss(Tensor(z), np.zeros((0, 2))).item() == 0.0


def test_total_loss_recomposes():
    parts = {k: Tensor(np.array(v)) for k, v in dict(pred=1.5, cbl=0.2, div=3.0, eq=0.5, vn=-0.25, cont=0.1).items()}
    w = LossWeights(lambda_cbl=10.0, lambda_div=0.5, lambda_eq=2.0, lambda_cont=3.0)
    assert np.isclose(total_loss("base", parts, w).item(), 1.5 + 2.0)
    assert np.isclose(total_loss("sra", parts, w).item(), 1.5 + 2.0 + 1.5 + 1.0)
    assert np.isclose(total_loss("vn", parts, w).item(), 1.5 + 2.0 - 0.25)
    assert np.isclose(total_loss("base", parts, w, continuity=True).item(), 3.5 + 0.3)


def test_total_loss_missing_part():
    with pytest.raises(MissingPart):
        total_loss("sra", {"pred": Tensor(1.0), "cbl": Tensor(0.0)}, LossWeights())
    with pytest.raises(MissingPart):
        total_loss("base", {"pred": Tensor(1.0), "cbl": Tensor(0.0)}, LossWeights(), continuity=True)


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        LossWeights(lambda_cbl=-1.0)


@pytest.mark.parametrize("name", ["pred", "cbl", "sra", "vn", "cont"])
def test_loss_gradchecks(name, rng):
    if name == "pred":
        z = T(rng.normal(size=(8, 3)))
        t = np.array([0, 1, 2, 0, 1, 2, 0, 0])
        err = gradcheck(lambda z: prediction_loss(z, t, class_weights=[1.0, 2.0, 0.5]), [z])
    elif name == "cbl":
        e = T(rng.normal(size=(10, 4)))
        labels = rng.integers(0, 2, 10)
        pairs = np.array([[i, (i + 1) % 10] for i in range(10)])
        err = gradcheck(lambda e: boundary_contrast_loss(e, labels, pairs), [e])
    elif name == "sra":
        logits = T(rng.normal(size=(12, 4)))

        def f(z):
            d, q = sra_reg_terms(softmax(z, axis=1), offsets=[0, 5, 12])
            return d + q

        err = gradcheck(f, [logits])
    elif name == "vn":
        u = T(rng.normal(size=(4, 3)))
        x = rng.normal(size=(20, 3))
        err = gradcheck(lambda u: vn_reg_loss(u, x, sigma=0.8), [u])
    else:
        z = T(rng.normal(size=(6, 3)))
        err = gradcheck(lambda z: continuity_loss(z, [[0, 1], [1, 2], [3, 5], [4, 0]]), [z])
    assert err < 1e-5
