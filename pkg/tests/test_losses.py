from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings, strategies as st

from avsgs.losses import (
    LossShapeError,
    LossWeights,
    SpectrogramClassifier,
    best_permutation,
    consistency_loss,
    cosep_loss,
    ideal_binary_mask,
    label_index,
    ortho_loss,
    total_loss,
)


def _ortho_oracle(Y):
    n = len(Y)
    return sum(float(np.dot(Y[i], Y[j])) ** 2 for i in range(n) for j in range(n) if i != j)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 6), seed=st.integers(0, 10_000), bg=st.booleans())
def test_ortho_matches_pairwise_oracle(n, seed, bg):
    Y = F.normalize(torch.randn(n, 16, generator=torch.Generator().manual_seed(seed), dtype=torch.float64), dim=1)
    rows = Y.numpy() if bg else Y.numpy()[:-1]
    assert math.isclose(float(ortho_loss(Y, include_background=bg)), _ortho_oracle(rows), rel_tol=1e-10, abs_tol=1e-12)


def test_ortho_identical_rows_and_orthonormal_rows():
    y = F.normalize(torch.ones(1, 4), dim=1)
    Y = torch.cat([y, y, torch.eye(4)[:1]])
    assert float(ortho_loss(Y)) == pytest.approx(2.0)
    assert float(ortho_loss(torch.eye(4), include_background=True)) == 0.0


def test_ortho_principal_count_selects_rows():
    Y = torch.eye(3)
    Y[2] = Y[0]
    assert float(ortho_loss(Y, principal_count=2)) == 0.0
    assert float(ortho_loss(Y, include_background=True)) == pytest.approx(2.0)


def test_total_loss_weighting():
    assert total_loss(2.0, 10.0, 0.5, LossWeights(1, 0.05, 1)) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        LossWeights(-1, 0, 0)


def test_best_permutation_matches_enumeration():
    rng = np.random.default_rng(0)
    for n in range(1, 6):
        p = rng.dirichlet(np.ones(8), size=n)
        labels = list(rng.choice(8, n, replace=False))
        costs = {perm: -sum(np.log(p[perm[c], labels[c]]) for c in range(n))
                 for perm in itertools.permutations(range(n))}
        best = min(costs.values())
        sigma = best_permutation(torch.as_tensor(p), labels)
        assert costs[sigma] == pytest.approx(best)


def test_hungarian_branch_agrees_with_brute_force_cost():
    rng = np.random.default_rng(1)
    n = 7
    p = torch.as_tensor(rng.dirichlet(np.ones(10), size=n))
    labels = list(range(n))
    sigma = best_permutation(p, labels)
    cost = -np.log(p.numpy()[:, labels].T)
    best = min(sum(cost[c, perm[c]] for c in range(n)) for perm in itertools.permutations(range(n)))
    assert sum(cost[c, sigma[c]] for c in range(n)) == pytest.approx(best)


def test_consistency_loss_value_and_floor():
    p = torch.tensor([[0.1, 0.9], [0.8, 0.2]], dtype=torch.float64)
    # best assignment: output 1 -> label 0, output 0 -> label 1
    expect = -math.log(0.8) - math.log(0.9)
    assert float(consistency_loss([p], [[0, 1]])) == pytest.approx(expect)
    zero = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    assert float(consistency_loss([zero], [[1]])) == pytest.approx(-math.log(1e-12))
    with pytest.raises(LossShapeError):
        consistency_loss([p], [[0]])


def test_ibm_strict_inequality():
    a = np.array([[1.0, 2.0, 3.0]])
    b = np.array([[1.0, 1.0, 4.0]])
    assert np.array_equal(ideal_binary_mask(a, b), [[0, 1, 0]])
    assert np.array_equal(ideal_binary_mask(b, a), [[0, 0, 1]])
    t = ideal_binary_mask(torch.as_tensor(a), torch.as_tensor(b))
    assert t.dtype == torch.float64 and t.tolist() == [[0, 1, 0]]


def test_cosep_direct_accumulation():
    rng = np.random.default_rng(2)
    masks = [rng.random((3, 4, 5)), rng.random((2, 4, 5))]
    ibms = [rng.integers(0, 2, (4, 5)).astype(float) for _ in range(2)]
    expect = 0.0
    for m, ibm in zip(masks, ibms):
        for f in range(4):
            for t in range(5):
                expect += abs(sum(m[k, f, t] for k in range(len(m))) - ibm[f, t])
    got = cosep_loss([torch.as_tensor(m) for m in masks], [torch.as_tensor(i) for i in ibms])
    assert float(got) == pytest.approx(expect)
    with pytest.raises(LossShapeError):
        cosep_loss([torch.as_tensor(masks[0])], [torch.zeros(5, 4, dtype=torch.float64)])


def test_classifier_outputs_distributions():
    torch.manual_seed(0)
    clf = SpectrogramClassifier(5)
    p = clf(torch.rand(3, 32, 32))
    assert p.shape == (3, 5)
    assert torch.allclose(p.sum(1), torch.ones(3))
    assert clf(torch.rand(32, 32)).shape == (1, 5)


def test_label_index_appends_background():
    assert label_index(["dogs", "bell"]) == {"dogs": 0, "bell": 1, "background": 2}
