import math
import warnings

import numpy as np
import pytest

from synthdp.mechanisms import (
    DataDependentBoundsWarning,
    DatasetParseError,
    GaussianRowModel,
    NgdConfig,
    RidgeProblem,
    model_parameter,
    model_tradeoff,
    ngd_moments,
    ngd_operators,
    output_perturb,
    output_perturbation_model,
    pathological_pair,
    problem_from_data,
    query_parameter,
    query_tradeoff,
    read_dataset_csv,
    ridge_fit,
    ridge_gradient,
    ridge_sensitivity,
    stationary_diagnostics,
    worst_seed,
)
from synthdp.numerics import DomainError, RngStream, matrix_sqrt_psd, top_singular_triplet
from synthdp.oracle import ngd_moments_by_recursion


def _random_problem(seed, m=7, d=3, n=2, lam=0.4):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, d))
    Y = rng.normal(size=(m, n))
    return RidgeProblem(X, Y, lam, (10.0, 10.0, 10.0))


# --- ridge ------------------------------------------------------------------


def test_ridge_zero_labels():
    p = RidgeProblem(np.ones((3, 2)), np.zeros((3, 1)), 1.0, (2.0, 0.0, 1.0))
    assert np.all(ridge_fit(p) == 0)


def test_ridge_scalar():
    # (1/1)(w - 1)^2 + w^2 is minimised at w = 1/2.
    p = RidgeProblem([[1.0]], [[1.0]], 1.0, (1.0, 1.0, 1.0))
    assert ridge_fit(p)[0, 0] == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_ridge_first_order_optimality(seed):
    p = _random_problem(seed)
    w = ridge_fit(p)
    assert np.linalg.norm(ridge_gradient(p, w)) <= 1e-8


def test_ridge_gradient_matches_finite_difference():
    p = _random_problem(3)
    w = np.random.default_rng(0).normal(size=(p.n, p.d))

    def F(w):
        return np.mean(np.sum((p.X @ w.T - p.Y) ** 2, axis=1)) + p.lam * np.sum(w * w)

    g = ridge_gradient(p, w)
    h = 1e-6
    for i in range(p.n):
        for j in range(p.d):
            e = np.zeros_like(w)
            e[i, j] = h
            assert (F(w + e) - F(w - e)) / (2 * h) == pytest.approx(g[i, j], abs=1e-6)


def test_problem_invariants():
    with pytest.raises(DomainError):
        RidgeProblem([[3.0, 4.0]], [[1.0]], 1.0, (4.9, 1.0, 1.0))
    with pytest.raises(DomainError):
        RidgeProblem([[1.0]], [[1.0]], 0.0, (1.0, 1.0, 1.0))
    with pytest.raises(DomainError):
        RidgeProblem(np.ones((2, 1)), np.ones((3, 1)), 1.0, (1.0, 1.0, 1.0))


def test_sensitivity_examples():
    assert ridge_sensitivity((1, 1, 1), 1.0, 100) == pytest.approx(0.06)
    assert ridge_sensitivity((0, 0, 2.5), 0.3, 10) == pytest.approx(2 * 2.5 / 10)
    assert ridge_sensitivity((1.2, 0.7, 3.0), 0.5, 80) == pytest.approx(ridge_sensitivity((1.2, 0.7, 3.0), 0.5, 40) / 2)


def test_sensitivity_bounds_actual_change():
    # Replacing one sample moves the ridge solution by at most Delta (with M_theta
    # a valid bound on both solutions' norms).
    rng = np.random.default_rng(4)
    for _ in range(50):
        X = rng.normal(size=(10, 3))
        X /= np.maximum(1, np.linalg.norm(X, axis=1))[:, None]
        Y = rng.uniform(-1, 1, size=(10, 1))
        X2, Y2 = X.copy(), Y.copy()
        X2[0] = rng.normal(size=3)
        X2[0] /= max(1, np.linalg.norm(X2[0]))
        Y2[0] = rng.uniform(-1, 1)
        p1 = RidgeProblem(X, Y, 0.5, (1, 1, 0))
        p2 = RidgeProblem(X2, Y2, 0.5, (1, 1, 0))
        w1, w2 = ridge_fit(p1), ridge_fit(p2)
        mt = max(np.linalg.norm(w1), np.linalg.norm(w2))
        assert np.linalg.norm(w1 - w2) <= ridge_sensitivity((1, 1, mt), 0.5, 10) + 1e-12


# --- output perturbation ------------------------------------------------------


def test_output_perturb_zero_noise():
    w = np.array([[1.0, -2.0]])
    assert np.array_equal(output_perturb(w, 0.0, RngStream(1)), w)


def test_output_perturb_moments():
    w = np.array([[0.3, -1.2, 2.0]])
    st = 0.7
    draws = np.stack([output_perturb(w, st, RngStream(9), index=i) for i in range(20000)])
    draws = np.concatenate([draws, np.stack([output_perturb(w, st, RngStream(10), index=i)
                                             for i in range(80000)])])
    assert abs(draws.var(axis=0).mean() / st**2 - 1) <= 0.03
    assert np.all(np.abs(draws.mean(axis=0) - w) <= 5 * st / math.sqrt(len(draws)))


def test_output_perturb_deterministic():
    w = np.zeros((2, 2))
    assert np.array_equal(output_perturb(w, 1.0, RngStream(3), 5), output_perturb(w, 1.0, RngStream(3), 5))


# --- NGD ----------------------------------------------------------------------


def test_ngd_initial_law():
    p = _random_problem(0)
    m = ngd_moments(p, NgdConfig(0.1, 1.0, 0))
    assert np.all(m.means == 0) and np.allclose(m.row_cov, np.eye(p.d))


def test_ngd_one_step_scalar():
    p = RidgeProblem([[2.0]], [[1.0]], 0.5, (2.0, 1.0, 1.0))
    eta, sigma = 0.05, 0.8
    ops = ngd_operators(p, eta)
    M = 1 - 2 * eta * (4.0 + 0.5)
    B = 2 * eta * 1.0 * 2.0
    assert ops.M[0, 0] == pytest.approx(M) and ops.B[0, 0] == pytest.approx(B)
    m = ngd_moments(p, NgdConfig(eta, sigma, 1))
    assert m.means[0, 0] == pytest.approx(B, abs=1e-15)
    assert m.row_cov[0, 0] == pytest.approx(M * M + 2 * eta * sigma**2, abs=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_ngd_closed_form_vs_recursion(seed):
    rng = np.random.default_rng(100 + seed)
    p = _random_problem(seed, m=int(rng.integers(2, 9)), d=int(rng.integers(1, 5)), n=int(rng.integers(1, 4)),
                        lam=float(rng.uniform(0.05, 2)))
    smax = ngd_operators(p, 1.0).eigvals[-1]
    eta = float(rng.uniform(0.05, 0.95)) / smax
    sigma = float(rng.uniform(0.1, 2))
    for t in (0, 1, 3, 10, 37, 100):
        a = ngd_moments(p, NgdConfig(eta, sigma, t))
        b = ngd_moments_by_recursion(p, NgdConfig(eta, sigma, t))
        assert np.max(np.abs(a.means - b.means)) <= 1e-10
        assert np.max(np.abs(a.row_cov - b.row_cov)) <= 1e-10


def test_ngd_stationary_is_limit():
    p = _random_problem(5, m=6, d=2, n=3)
    conf = NgdConfig(0.01, 0.9)
    lim = ngd_moments(p, conf)
    far = ngd_moments(p, NgdConfig(0.01, 0.9, 10_000))
    assert np.max(np.abs(lim.means - far.means)) <= 1e-10
    assert np.max(np.abs(lim.row_cov - far.row_cov)) <= 1e-10
    # Noiseless stationary mean is the ridge solution.
    assert np.allclose(lim.means, ridge_fit(p), atol=1e-12)


def test_ngd_stationary_rejects_non_contraction():
    p = _random_problem(2)
    smax = ngd_operators(p, 1.0).eigvals[-1]
    with pytest.raises(DomainError):
        ngd_moments(p, NgdConfig(1.01 / smax, 1.0))
    # Just inside the exact spectral condition is accepted.
    ngd_moments(p, NgdConfig(0.99 / smax, 1.0))


def test_stationary_diagnostics_report_both_forms():
    p = _random_problem(1)
    conf = NgdConfig(0.05, 0.5)
    diag = stationary_diagnostics(p, conf)
    assert diag["contracts"]
    S = ngd_operators(p, 0.05).sigma_mat
    # Geometric-sum form equals (sigma^2/2) Sigma^{-1} (I - eta Sigma)^{-1}.
    alt = 0.5 * 0.25 * np.linalg.inv(S) @ np.linalg.inv(np.eye(p.d) - 0.05 * S)
    assert np.allclose(diag["cov_recursion"], alt)
    assert np.allclose(diag["cov_recursion"], ngd_moments(p, conf).row_cov)
    assert diag["frobenius_gap"] > 1e-3


def test_ngd_config_validation():
    with pytest.raises(DomainError):
        NgdConfig(0.0, 1.0)
    with pytest.raises(DomainError):
        NgdConfig(0.1, 1.0, -1)


# --- trade-offs between row models ---------------------------------------------


def test_model_tradeoff_examples():
    a = GaussianRowModel(np.zeros((1, 3)), np.eye(3))
    assert model_tradeoff(a, a).mu == 0
    b = GaussianRowModel(np.array([[1.0, 0, 0]]), np.eye(3))
    assert model_tradeoff(a, b).mu == pytest.approx(1.0)


def test_model_parameter_mahalanobis():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(3, 3))
    cov = A @ A.T + np.eye(3)
    ma = GaussianRowModel(rng.normal(size=(2, 3)), cov)
    mb = GaussianRowModel(rng.normal(size=(2, 3)), cov)
    delta = ma.means - mb.means
    ref = math.sqrt(sum(r @ np.linalg.inv(cov) @ r for r in delta))
    assert model_parameter(ma, mb) == pytest.approx(ref, rel=1e-12)


def test_model_covariance_mismatch():
    a = GaussianRowModel(np.zeros((1, 2)), np.eye(2))
    b = GaussianRowModel(np.zeros((1, 2)), 2 * np.eye(2))
    with pytest.raises(DomainError):
        model_tradeoff(a, b)


def test_query_examples():
    a = GaussianRowModel(np.ones((2, 3)), np.eye(3))
    assert query_tradeoff(a, a, [1, 2, 3]).mu == 0
    b = GaussianRowModel(np.array([[1.0, 2, 1], [0, 1, 1]]), np.eye(3))
    z = np.array([0.3, -1.0, 2.0])
    assert query_parameter(a, b, z) == pytest.approx(np.linalg.norm((a.means - b.means) @ z) / np.linalg.norm(z))
    with pytest.raises(DomainError):
        query_tradeoff(a, b, np.zeros(3))


def _random_models(seed, n=2, d=4):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, d))
    cov = A @ A.T + 0.5 * np.eye(d)
    return (GaussianRowModel(rng.normal(size=(n, d)), cov),
            GaussianRowModel(rng.normal(size=(n, d)), cov))


@pytest.mark.parametrize("seed", range(5))
def test_worst_seed_beats_probes(seed):
    ma, mb = _random_models(seed)
    ws = worst_seed(ma, mb)
    ref = top_singular_triplet((ma.means - mb.means) @ matrix_sqrt_psd(ma.row_cov, inverse=True)).sigma_max
    assert ws.achieved_mu == pytest.approx(ref, abs=1e-9)
    assert query_parameter(ma, mb, ws.z) == pytest.approx(ws.achieved_mu, abs=1e-9)
    probes = np.random.default_rng(seed + 50).normal(size=(1000, ma.means.shape[1]))
    vals = [query_parameter(ma, mb, z) for z in probes]
    assert max(vals) <= ws.achieved_mu + 1e-9
    assert ws.achieved_mu <= model_parameter(ma, mb) + 1e-12


def test_worst_seed_output_perturbation():
    rng = np.random.default_rng(7)
    w1, w2 = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    st = 0.6
    ws = worst_seed(output_perturbation_model(w1, st), output_perturbation_model(w2, st))
    s = np.linalg.svd(w1 - w2, compute_uv=False)[0]
    assert ws.achieved_mu == pytest.approx(s / st, rel=1e-12)
    trip = top_singular_triplet(w1 - w2)
    assert abs(abs(ws.z @ trip.right) / np.linalg.norm(ws.z) - 1) <= 1e-9


def test_worst_seed_rank_one():
    u, v = np.array([1.0, 2.0]), np.array([0.5, -1.0, 2.0])
    a = GaussianRowModel(np.zeros((2, 3)), np.eye(3))
    b = GaussianRowModel(np.outer(u, v), np.eye(3))
    ws = worst_seed(a, b)
    assert ws.achieved_mu == pytest.approx(np.linalg.norm(u) * np.linalg.norm(v))
    assert ws.achieved_mu == pytest.approx(model_parameter(a, b), abs=1e-9)


def test_worst_seed_degenerate():
    a = GaussianRowModel(np.ones((1, 2)), np.eye(2))
    assert worst_seed(a, a).degenerate


def test_label_dp_rank_one_equality():
    # Only one label column differs: the shift Y^T X A has rank one.
    rng = np.random.default_rng(8)
    X = rng.normal(size=(6, 3))
    Y = rng.normal(size=(6, 2))
    Y2 = Y.copy()
    Y2[2, 1] += 0.8
    p1 = problem_from_data(X, Y, 0.5, (10, 10, 10))
    p2 = problem_from_data(X, Y2, 0.5, (10, 10, 10))
    conf = NgdConfig(0.05, 0.7)
    ma, mb = ngd_moments(p1, conf), ngd_moments(p2, conf)
    assert worst_seed(ma, mb).achieved_mu == pytest.approx(model_parameter(ma, mb), abs=1e-9)


# --- pathological pair ----------------------------------------------------------


def test_pathological_scale_one():
    p1, p2 = pathological_pair([1.0, 2.0], [1.0, 0.0], [1.0, 1.0], 1.0)
    assert np.allclose(ridge_fit(p1), ridge_fit(p2))


def test_pathological_instance():
    p1, p2 = pathological_pair([1.0, 1.0], [1.0, 0.0], [1.0, 0.0], 2.0, lam=1.0)
    mu = ridge_fit(p2) - ridge_fit(p1)
    s = np.linalg.svd(mu, compute_uv=False)
    assert s[1] <= 1e-12
    # Direct closed form: ||a||^2 / (m lam + ||a||^2) * |scale - 1| * ||v|| = 2 / 4.
    assert np.linalg.norm(mu) == pytest.approx(0.5, abs=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_pathological_equality_case(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=5)
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    v = rng.normal(size=2)
    scale = float(rng.uniform(-2, 3))
    lam = float(rng.uniform(0.1, 2))
    p1, p2 = pathological_pair(a, u, v, scale, lam)
    w1, w2 = ridge_fit(p1), ridge_fit(p2)
    mu = w2 - w1
    pred = abs(scale - 1) * (a @ a) * np.linalg.norm(v) / (5 * lam + a @ a)
    assert np.linalg.norm(mu) == pytest.approx(pred, rel=1e-10)
    assert np.linalg.svd(mu, compute_uv=False)[0] == pytest.approx(np.linalg.norm(mu), rel=1e-10)
    st = 0.3
    ma, mb = output_perturbation_model(w1, st), output_perturbation_model(w2, st)
    assert worst_seed(ma, mb).achieved_mu == pytest.approx(np.linalg.norm(mu) / st, abs=1e-9)


# --- dataset ingestion -------------------------------------------------------------


def test_read_dataset(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("x_1,x_2,y_1\n1,2,3\n4,5,6\n")
    X, Y = read_dataset_csv(f)
    assert X.tolist() == [[1, 2], [4, 5]] and Y.tolist() == [[3], [6]]


@pytest.mark.parametrize("text,line,col", [
    ("x_1,y_1\n1,2\n3,oops\n", 3, 2),
    ("x_1,z,y_1\n1,2,3\n", 1, 2),
    ("x_1,y_1\n1,2,3\n", 2, None),
    ("", 1, None),
])
def test_read_dataset_errors(tmp_path, text, line, col):
    f = tmp_path / "bad.csv"
    f.write_text(text)
    with pytest.raises(DatasetParseError) as err:
        read_dataset_csv(f)
    assert err.value.line == line and err.value.column == col


def test_data_dependent_bounds_warn():
    with pytest.warns(DataDependentBoundsWarning):
        p = problem_from_data(np.ones((2, 2)), np.ones((2, 1)), 1.0)
    assert p.bounds[0] == pytest.approx(math.sqrt(2))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        problem_from_data(np.ones((2, 2)), np.ones((2, 1)), 1.0, (2, 2, 2))
