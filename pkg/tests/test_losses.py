from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from hierseg.losses import (
    LossConfig,
    concat_finest_first,
    flat_consistency_variant,
    hv_loss,
    tk_bce_variant,
    tk_loss,
    total_loss,
)
from hierseg.taxonomy import TaxonomyTree, encode_tree_path, infer_ancestors

TWO_LEVEL = TaxonomyTree(level_sizes=(2, 4), parents=((0, 0, 1, 1),))
LIVING17_SIZES = (17, 34)


def make_tree(sizes):
    parents = []
    for l in range(1, len(sizes)):
        # spread children evenly over parents
        parents.append(tuple(c * sizes[l - 1] // sizes[l] for c in range(sizes[l])))
    return TaxonomyTree(level_sizes=tuple(sizes), parents=tuple(parents))


def rand_logits(rng, sizes, scale=2.0):
    return [torch.tensor(rng.normal(0, scale, size=n), dtype=torch.float64) for n in sizes]


def central_difference_grad(fn, logits, h=1e-5):
    grads = []
    for l, vec in enumerate(logits):
        g = torch.zeros_like(vec)
        for i in range(vec.shape[0]):
            bumped = [v.clone() for v in logits]
            bumped[l][i] += h
            up = fn(bumped)
            bumped[l][i] -= 2 * h
            down = fn(bumped)
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def check_gradients(fn, logits, rel_tol=1e-4):
    leaves = [v.clone().requires_grad_(True) for v in logits]
    fn(leaves).backward()
    analytic = [v.grad.clone() for v in leaves]
    numeric = central_difference_grad(lambda ls: fn(ls).detach(), logits)
    a = torch.cat(analytic)
    n = torch.cat(numeric)
    denom = max(float(a.norm()), float(n.norm()), 1e-12)
    assert float((a - n).norm()) / denom < rel_tol


def test_hv_saturated_correct_is_tiny():
    logits = [torch.tensor([20.0, 0.0]), torch.tensor([0.0, 20.0, 0.0, 0.0])]
    assert float(hv_loss(logits, (0, 1))) < 1e-6


def test_hv_uniform_closed_form():
    logits = [torch.zeros(2, dtype=torch.float64), torch.zeros(4, dtype=torch.float64)]
    expected = math.log(2) + math.log(4)
    assert float(hv_loss(logits, (1, 2))) == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(2.0794, abs=5e-5)


def test_hv_single_chain_is_zero():
    logits = [torch.tensor([3.7]), torch.tensor([-1.2])]
    assert float(hv_loss(logits, (0, 0))) == pytest.approx(0.0, abs=1e-12)


def test_hv_shape_errors():
    with pytest.raises(ValueError):
        hv_loss([torch.zeros(2)], (0, 1))
    with pytest.raises(IndexError):
        hv_loss([torch.zeros(2), torch.zeros(4)], (0, 4))


def test_hv_per_level_shift_invariance():
    rng = np.random.default_rng(0)
    logits = rand_logits(rng, (3, 5))
    base = float(hv_loss(logits, (1, 4)))
    shifted = [logits[0] + 7.3, logits[1] - 2.9]
    assert float(hv_loss(shifted, (1, 4))) == pytest.approx(base, rel=1e-12)


def test_concat_is_finest_first():
    logits = [torch.tensor([1.0, 2.0]), torch.tensor([3.0, 4.0, 5.0])]
    np.testing.assert_allclose(concat_finest_first(logits).numpy(), [3, 4, 5, 1, 2])


def test_tk_uniform_closed_form_living17_sizes():
    tree = make_tree(LIVING17_SIZES)
    logits = [torch.zeros(17, dtype=torch.float64), torch.zeros(34, dtype=torch.float64)]
    target = encode_tree_path(tree, infer_ancestors(tree, 5))
    # closed form: sum over L true positions of (1/L) * ln(sum(N) / L)
    assert float(tk_loss(logits, target)) == pytest.approx(math.log(51 / 2), abs=1e-9)
    assert math.log(51 / 2) == pytest.approx(3.2387, abs=5e-5)


def test_tk_saturated_correct_is_tiny():
    tree = TWO_LEVEL
    path = (1, 3)
    target = encode_tree_path(tree, path)
    logits = [torch.zeros(2), torch.zeros(4)]
    logits[0][1] = 30.0
    logits[1][3] = 30.0
    assert float(tk_loss(logits, target)) < 1e-6


def test_tk_wrong_position_monotonicity():
    tree = TWO_LEVEL
    target = encode_tree_path(tree, (0, 0))
    rng = np.random.default_rng(1)
    logits = rand_logits(rng, tree.level_sizes)
    base = float(tk_loss(logits, target))
    for delta in (0.1, 0.5, 2.0):
        bumped = [logits[0].clone(), logits[1].clone()]
        bumped[1][2] += delta  # a wrong fine position
        assert float(tk_loss(bumped, target)) > base


def test_tk_shift_invariance():
    tree = TWO_LEVEL
    target = encode_tree_path(tree, (1, 2))
    rng = np.random.default_rng(2)
    logits = rand_logits(rng, tree.level_sizes)
    base = float(tk_loss(logits, target))
    shifted = [v + 11.7 for v in logits]
    assert float(tk_loss(shifted, target)) == pytest.approx(base, rel=1e-10)


def test_tk_nonnegative():
    rng = np.random.default_rng(3)
    tree = make_tree((3, 9))
    for _ in range(50):
        logits = rand_logits(rng, tree.level_sizes, scale=4.0)
        leaf = int(rng.integers(9))
        target = encode_tree_path(tree, infer_ancestors(tree, leaf))
        assert float(tk_loss(logits, target)) >= 0.0


def test_tk_layout_mismatch():
    with pytest.raises(ValueError):
        tk_loss([torch.zeros(2), torch.zeros(4)], np.zeros(5))


def test_tk_bce_closed_form_at_target_logits():
    # logits = logit(1/L) at the two true positions, -30 elsewhere
    tree = TWO_LEVEL
    path = (0, 2)
    target = encode_tree_path(tree, path)
    total_n = sum(tree.level_sizes)
    logits = [torch.full((n,), -30.0, dtype=torch.float64) for n in tree.level_sizes]
    logit_half = math.log(0.5 / (1 - 0.5))
    logits[0][0] = logit_half
    logits[1][2] = logit_half
    h_half = -(0.5 * math.log(0.5) + 0.5 * math.log(0.5))  # binary entropy of 1/2
    eps = (total_n - 2) * math.log(1 + math.exp(-30.0)) / total_n
    expected = 2 * h_half / total_n + eps
    assert float(tk_bce_variant(logits, target)) == pytest.approx(expected, abs=1e-12)


def test_tk_bce_matches_elementwise_oracle():
    rng = np.random.default_rng(4)
    tree = make_tree((3, 6))
    for _ in range(20):
        logits = rand_logits(rng, tree.level_sizes, scale=3.0)
        leaf = int(rng.integers(6))
        target = encode_tree_path(tree, infer_ancestors(tree, leaf))
        concat = np.concatenate([logits[1].numpy(), logits[0].numpy()])
        total = 0.0
        for x, t in zip(concat, target):
            p = 1.0 / (1.0 + math.exp(-x))
            total += -(t * math.log(p) + (1 - t) * math.log(1 - p))
        assert float(tk_bce_variant(logits, target)) == pytest.approx(
            total / len(concat), rel=1e-9)


def test_tk_bce_denominator_scaling():
    # adding zero-target positions held at -30 shrinks the mean through the
    # denominator; verify against the elementwise oracle on both sizes
    path_positions = [(5.0, 0.5), (-1.0, 0.5)]

    def mean_bce(extra_zeros):
        xs = [x for x, _ in path_positions] + [-30.0] * extra_zeros
        ts = [t for _, t in path_positions] + [0.0] * extra_zeros
        total = 0.0
        for x, t in zip(xs, ts):
            p = 1.0 / (1.0 + math.exp(-x))
            total += -(t * math.log(p) + (1 - t) * math.log(1 - p))
        return total / len(xs)

    assert mean_bce(8) < mean_bce(2)


def test_flat_consistency_mass_on_true_branch():
    tree = TWO_LEVEL
    fine = torch.full((4,), -30.0, dtype=torch.float64)
    fine[0] = 10.0
    fine[1] = 10.0  # children of coarse 0
    loss = flat_consistency_variant(fine, tree, 0)
    assert float(loss) < 1e-6


def test_flat_consistency_wrong_branch_is_maximal():
    tree = TWO_LEVEL
    wrong = torch.full((4,), -30.0, dtype=torch.float64)
    wrong[2] = 10.0
    wrong[3] = 10.0  # all mass on coarse 1, truth coarse 0
    worst = float(flat_consistency_variant(wrong, tree, 0))
    rng = np.random.default_rng(5)
    for _ in range(50):
        fine = torch.tensor(rng.normal(0, 3, size=4), dtype=torch.float64)
        assert float(flat_consistency_variant(fine, tree, 0)) <= worst + 1e-9


def test_flat_consistency_matches_direct_oracle():
    tree = TWO_LEVEL
    rng = np.random.default_rng(6)
    for _ in range(20):
        fine = torch.tensor(rng.normal(0, 2, size=4), dtype=torch.float64)
        probs = torch.softmax(fine, dim=0).numpy()
        scores = np.array([probs[0] + probs[1], probs[2] + probs[3]])
        assert scores.sum() == pytest.approx(1.0)
        target = np.array([0.0, 1.0])
        expected = float(np.mean(
            -(target * np.log(scores) + (1 - target) * np.log(1 - scores))))
        got = float(flat_consistency_variant(fine, tree, 1))
        assert got == pytest.approx(expected, rel=1e-9)


def test_total_loss_alpha_zero_is_hv():
    tree = TWO_LEVEL
    rng = np.random.default_rng(7)
    logits = rand_logits(rng, tree.level_sizes)
    total, parts = total_loss(logits, (0, 1), tree, LossConfig(alpha=0.0))
    assert float(total) == pytest.approx(float(hv_loss(logits, (0, 1))), rel=1e-12)
    assert parts["consistency"] == 0.0


def test_total_loss_matches_component_sum():
    tree = TWO_LEVEL
    rng = np.random.default_rng(8)
    logits = rand_logits(rng, tree.level_sizes)
    path = (1, 3)
    target = encode_tree_path(tree, path)
    total, parts = total_loss(logits, path, tree, LossConfig(alpha=0.5, variant="tk_kl"))
    expected = float(hv_loss(logits, path)) + 0.5 * float(tk_loss(logits, target))
    assert float(total) == pytest.approx(expected, rel=1e-12)
    assert parts["hv"] == pytest.approx(float(hv_loss(logits, path)))


def test_default_alpha_is_half():
    assert LossConfig().alpha == 0.5


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(alpha=-1.0)
    with pytest.raises(ValueError):
        LossConfig(variant="nope")
    with pytest.raises(ValueError):
        LossConfig(label_smoothing=1.0)


@pytest.mark.parametrize("loss_name", ["hv", "tk_kl", "tk_bce", "flat"])
def test_gradients_match_finite_differences(loss_name):
    rng = np.random.default_rng(hash(loss_name) % 2**32)
    for trial in range(100):
        coarse = int(rng.integers(2, 5))
        sizes = (coarse, coarse + int(rng.integers(0, 4)))
        tree = make_tree(sizes)
        leaf = int(rng.integers(sizes[1]))
        path = infer_ancestors(tree, leaf)
        target = encode_tree_path(tree, path)
        logits = rand_logits(rng, sizes, scale=2.0)
        if loss_name == "hv":
            fn = lambda ls: hv_loss(ls, path)
        elif loss_name == "tk_kl":
            fn = lambda ls: tk_loss(ls, target)
        elif loss_name == "tk_bce":
            fn = lambda ls: tk_bce_variant(ls, target)
        else:
            fn = lambda ls: flat_consistency_variant(ls[-1], tree, path[0]) \
                + 0.0 * ls[0].sum()
        check_gradients(fn, logits)
