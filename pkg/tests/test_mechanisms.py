import math

import numpy as np
import pytest

from toydown.errors import ConfigurationError, InputError
from toydown.hierarchy import TypeSchema, build_homogeneous
from toydown.mechanisms import (
    BudgetAllocation,
    Histogram,
    Workload,
    as_seed_sequence,
    detailed_histogram,
    geometric_variance,
    laplace_inverse_cdf,
    laplace_variance,
    sample_laplace,
    sample_two_sided_geometric,
    stream,
    toydown_noise,
    total_histogram,
    workload_noise,
)

N = 1_000_000


def test_laplace_moments():
    x = sample_laplace(2.0, stream(1), N)
    assert abs(x.mean()) < 0.01
    y = sample_laplace(2.0 / 1.0, stream(2), N)
    assert y.var() == pytest.approx(8.0, rel=0.02)
    assert laplace_variance(1.0) == 8.0


def test_laplace_inverse_cdf_median():
    assert laplace_inverse_cdf(0.5, 3.0) == 0.0


def test_laplace_inverse_cdf_quantile():
    # P(X <= -b ln 2) = 1/4
    assert laplace_inverse_cdf(0.25, 1.0) == pytest.approx(-math.log(2))


@pytest.mark.parametrize("b", [0.0, -1.0])
def test_laplace_bad_scale(b):
    with pytest.raises(InputError):
        sample_laplace(b, stream(0))


def test_geometric_moments():
    x = sample_two_sided_geometric(0.5, stream(3), N)
    assert x.dtype.kind == "i"
    assert abs(x.mean()) < 0.01
    assert x.var() == pytest.approx(4.0, rel=0.02)
    assert geometric_variance(0.5) == 4.0
    assert (x == 0).mean() == pytest.approx(1 / 3, rel=0.01)


def test_geometric_pmf_shape():
    beta = 0.7
    x = sample_two_sided_geometric(beta, stream(4), N)
    for k in (-2, 1, 3):
        want = (1 - beta) / (1 + beta) * beta ** abs(k)
        assert (x == k).mean() == pytest.approx(want, rel=0.03)


@pytest.mark.parametrize("beta", [0.0, 1.0, 1.5, -0.2])
def test_geometric_bad_beta(beta):
    with pytest.raises(InputError):
        sample_two_sided_geometric(beta, stream(0))


def test_budget_allocation():
    a = BudgetAllocation((0.2, 0.3, 0.5))
    assert a.total == pytest.approx(1.0, abs=1e-12)
    assert a[1] == 0.2 and a[3] == 0.5 and a.depth == 3
    with pytest.raises(InputError):
        BudgetAllocation((0.5, 0.0))
    h, _ = build_homogeneous([2, 2])
    assert list(a.node_budgets(h)) == [0.2, 0.3, 0.3] + [0.5] * 4
    with pytest.raises(InputError):
        BudgetAllocation((1.0, 1.0)).node_budgets(h)


def test_toydown_huge_budget_is_nearly_exact():
    _, table = build_homogeneous([5, 5], leaf_populations=3)
    noisy, _ = toydown_noise(table, BudgetAllocation((1e9,) * 3), seed=0)
    assert np.max(np.abs(noisy.values - table.values)) < 1e-6


def test_toydown_equal_split_variance():
    # five levels at 0.2 each: per-node variance 8 / 0.04 = 200
    h, table = build_homogeneous([4, 4, 4, 4])
    alloc = BudgetAllocation.equal(1.0, 5)
    _, ledger = toydown_noise(table, alloc, seed=11)
    draws = ledger.draws[:, 0]
    rest = []
    for rep in range(40):
        rest.append(toydown_noise(table, alloc, as_seed_sequence(11, rep))[1].draws[:, 0])
    all_draws = np.concatenate([draws, *rest])
    assert all_draws.var() == pytest.approx(200.0, rel=0.03)


def test_toydown_determinism_and_ledger():
    _, table = build_homogeneous([3, 3], leaf_populations=np.arange(9.0))
    alloc = BudgetAllocation.equal(1.0, 3)
    a, la = toydown_noise(table, alloc, 42)
    b, lb = toydown_noise(table, alloc, 42)
    assert np.array_equal(la.draws, lb.draws)
    assert np.array_equal(a.values, table.values + la.draws)
    c, _ = toydown_noise(table, alloc, 43)
    assert not np.array_equal(a.values, c.values)


def test_toydown_single_mode_noises_totals():
    schema = TypeSchema(("a", "b"))
    _, table = build_homogeneous([3], leaf_populations=np.ones((3, 2)), schema=schema)
    noisy, ledger = toydown_noise(table, BudgetAllocation((0.5, 0.5)), 1, multi=False)
    assert noisy.n_types == 1 and ledger.columns == ("total",)
    assert np.allclose(noisy.values - ledger.draws, table.totals().values)


def test_toydown_depth_mismatch():
    _, table = build_homogeneous([3])
    with pytest.raises(InputError):
        toydown_noise(table, BudgetAllocation((1.0,)), 0)


def test_streams_are_per_column():
    schema = TypeSchema(("a", "b", "c"))
    _, table = build_homogeneous([4], leaf_populations=np.ones((4, 3)), schema=schema)
    alloc = BudgetAllocation((1.0, 1.0))
    _, multi = toydown_noise(table, alloc, 5)
    for t in range(3):
        _, single = toydown_noise(table.column(t), alloc, 5, type_streams=[t])
        assert np.array_equal(single.draws[:, 0], multi.draws[:, t])


def test_draws_uncorrelated():
    h, table = build_homogeneous([10, 10], schema=TypeSchema(("a", "b")),
                                 leaf_populations=np.ones((100, 2)))
    alloc = BudgetAllocation.equal(1.0, 3)
    ds = np.stack([toydown_noise(table, alloc, as_seed_sequence(9, r))[1].draws
                   for r in range(1000)])
    # types, neighbouring nodes, and consecutive replicates
    pairs = [
        (ds[:, :, 0].ravel(), ds[:, :, 1].ravel()),
        (ds[:, :-1, 0].ravel(), ds[:, 1:, 0].ravel()),
        (ds[:-1, :, 0].ravel(), ds[1:, :, 0].ravel()),
    ]
    for x, y in pairs:
        assert abs(np.corrcoef(x, y)[0, 1]) < 0.01


def test_toydown_noise_mean_zero():
    _, table = build_homogeneous([20], leaf_populations=7)
    alloc = BudgetAllocation((1.0, 1.0))
    diffs = np.stack([toydown_noise(table, alloc, as_seed_sequence(3, r))[0].values - table.values
                      for r in range(2000)])
    se = diffs.std(axis=0, ddof=1) / math.sqrt(diffs.shape[0])
    assert np.all(np.abs(diffs.mean(axis=0)) < 4 * se)


# workloads -------------------------------------------------------------------


def test_workload_validation():
    with pytest.raises(InputError):
        Workload((), (), 2)
    with pytest.raises(InputError):
        Workload((detailed_histogram(2),), (0.9,), 2)
    with pytest.raises(InputError):
        Workload((Histogram("bad", ((0,),)),), (1.0,), 2)
    w = Workload.from_bins(3, {"detailed": (0.1, [[0], [1], [2]]), "pair": (0.9, [[0, 1], [2]])})
    assert list(w.bin_shares) == [0.1, 0.1, 0.1, 0.9, 0.9]
    assert w.query_matrix().shape == (5, 3)


def test_workload_beta_from_share():
    # a 10% detailed share gives beta = exp(-0.05 * eps)
    eps = 2.0
    beta = math.exp(-0.1 * eps / 2)
    assert beta == pytest.approx(math.exp(-0.05 * eps))
    w = Workload((detailed_histogram(1), total_histogram(1)), (0.1, 0.9), 1)
    _, table = build_homogeneous([200, 50])
    _, ledger = workload_noise(table, w, BudgetAllocation((eps,) * 3), 0)
    assert ledger.column(0).var() == pytest.approx(geometric_variance(beta), rel=0.03)
    assert ledger.column(1).var() == pytest.approx(geometric_variance(math.exp(-0.9 * eps / 2)),
                                                   rel=0.03)
    assert np.all(ledger.draws == np.round(ledger.draws))


def test_workload_single_histogram_is_per_bin_geometric():
    _, table = build_homogeneous([4], leaf_populations=np.arange(8.0).reshape(4, 2),
                                 schema=TypeSchema(("a", "b")))
    alloc = BudgetAllocation((1.0, 1.0))
    bins, ledger = workload_noise(table, Workload.detailed(2), alloc, 7)
    assert np.array_equal(bins, table.values + ledger.draws)
    assert ledger.budget_by_level == (1.0, 1.0)


def test_workload_total_histogram_within_tail():
    _, table = build_homogeneous([10], leaf_populations=5)
    w = Workload((total_histogram(1),), (1.0,), 1)
    alloc = BudgetAllocation((0.5, 0.5))
    sd = math.sqrt(geometric_variance(math.exp(-0.25)))
    for r in range(200):
        bins, _ = workload_noise(table, w, alloc, as_seed_sequence(1, r))
        assert abs(bins[0, 0] - table.values[0, 0]) <= 5 * sd


def test_workload_budget_bookkeeping():
    w = Workload((detailed_histogram(2), total_histogram(2)), (0.25, 0.75), 2)
    _, table = build_homogeneous([3], leaf_populations=np.ones((3, 2)),
                                 schema=TypeSchema(("a", "b")))
    alloc = BudgetAllocation((0.4, 0.6))
    _, ledger = workload_noise(table, w, alloc, 0)
    assert ledger.budget_by_level == pytest.approx(alloc.per_level, abs=1e-15)


def test_workload_type_mismatch():
    _, table = build_homogeneous([3])
    with pytest.raises(ConfigurationError):
        workload_noise(table, Workload.detailed(2), BudgetAllocation((1.0, 1.0)), 0)
