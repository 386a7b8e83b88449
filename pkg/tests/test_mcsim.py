import math

import numpy as np
import pytest

from ivsmpc import mcsim
from ivsmpc.controller import OcpSpec
from ivsmpc.errors import EmptyCondition, SingularCovariance
from ivsmpc.mcsim import (SimConfig, SimSetup, confidence_ellipse, cost_metrics, ecdf_conditioned,
                          make_rng, nearest_rank, run_closed_loop, sample_disturbance, simulate,
                          standard_normals, violation_rate, xi_distribution)
from ivsmpc.model import ChanceConstraint, LinearSystem, synthesize
from ivsmpc.terminalset import Polytope

from conftest import DCDC_A, DCDC_B, DCDC_Q, DCDC_R
from oracles import active_set_oracle

X0 = (1.99, 7.0)


def dcdc_setup(vw=0.1, scheme="ivsmpc", tightening=None, horizon=8):
    sys = LinearSystem(DCDC_A, DCDC_B, vw * np.eye(2))
    g = synthesize(sys, DCDC_Q, DCDC_R)
    con = (ChanceConstraint([1.0, 0.0], 2.0, 0.9),)
    if scheme == "lqr":
        return SimSetup(sys=sys, gains=g, constraints=con)
    mode = "interpolated" if scheme == "ivsmpc" else "fixed"
    ocp = OcpSpec(sys=sys, gains=g, constraints=con, n=horizon, z_f=Polytope.whole_space(2),
                  tightening=tightening or ("gaussian" if scheme == "ivsmpc" else "unimodal"),
                  variance_mode=mode)
    return SimSetup(sys=sys, gains=g, constraints=con, ocp=ocp)


class TestSampling:
    def test_zero_covariance(self):
        rng = make_rng(1, 0)
        assert np.array_equal(sample_disturbance(rng, np.zeros((2, 2))), np.zeros(2))

    def test_covariance(self):
        rng = make_rng(42, 3)
        z = standard_normals(rng, 2_000_000).reshape(-1, 2)
        w = z @ (math.sqrt(0.1) * np.eye(2)).T
        cov = np.cov(w, rowvar=False)
        assert np.abs(cov - 0.1 * np.eye(2)).max() <= 0.01 * 0.1

    def test_odd_count(self):
        assert standard_normals(make_rng(0, 0), 3).shape == (3,)

    def test_determinism(self):
        a = [sample_disturbance(make_rng(7, 5), np.eye(2)) for _ in range(2)]
        assert np.array_equal(a[0], a[1])
        b = sample_disturbance(make_rng(7, 6), np.eye(2))
        assert not np.array_equal(a[0], b)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SimConfig(steps=0, runs=1, seed=0, scheme="lqr", x0=(0, 0))
        with pytest.raises(ValueError):
            SimConfig(steps=1, runs=1, seed=0, scheme="mpc", x0=(0, 0))
        with pytest.raises(ValueError):
            SimConfig(steps=1, runs=1, seed=-1, scheme="lqr", x0=(0, 0))


class TestClosedLoop:
    def test_lqr_noise_free(self):
        setup = dcdc_setup(vw=0.0, scheme="lqr")
        tr = run_closed_loop(setup, SimConfig(40, 1, 0, "lqr", X0), 0)
        rho = max(abs(np.linalg.eigvals(setup.gains.a_k)))
        norms = np.linalg.norm(tr.x, axis=1)
        assert norms[-1] <= 50 * rho ** 40 * norms[0]
        assert np.allclose(tr.u[:, 0], tr.x[:-1] @ setup.gains.k[0])

    def test_noise_free_matches_nominal_mpc(self):
        setup = dcdc_setup(vw=0.0)
        steps = 12
        tr = run_closed_loop(setup, SimConfig(steps, 1, 0, "ivsmpc", X0), 0)
        assert np.all(tr.xi == 0.0)
        g, a, b = setup.gains, DCDC_A, DCDC_B

        def rollout(v, x):
            z = [x]
            for vk in v:
                z.append(a @ z[-1] + b[:, 0] * vk)
            return np.array(z)

        # the rollout is affine in v: z = z_free + G v, built column by column
        G = np.stack([rollout(e, np.zeros(2)) for e in np.eye(8)], axis=-1)  # (9, 2, 8)
        weights = [DCDC_Q] * 8 + [g.p]
        H = 2 * (sum(G[k].T @ weights[k] @ G[k] for k in range(9)) + DCDC_R[0, 0] * np.eye(8))

        x = np.array(X0)
        for t in range(steps):
            free = rollout(np.zeros(8), x)
            f = 2 * sum(G[k].T @ weights[k] @ free[k] for k in range(9))
            rhs = 2.0 - free[:8, 0] - 1e-7 * np.arange(8)
            _, v = active_set_oracle(H, f, G[:8, 0, :], rhs)
            assert tr.u[t, 0] == pytest.approx(v[0], abs=1e-6)
            x = a @ x + b[:, 0] * v[0]
            assert np.allclose(tr.x[t + 1], x, atol=1e-6)

    def test_trace_shapes(self):
        tr = run_closed_loop(dcdc_setup(), SimConfig(5, 1, 3, "ivsmpc", X0), 0)
        assert tr.x.shape == (6, 2) and tr.u.shape == (5, 1) and tr.cvals.shape == (6, 1)
        assert tr.xi[0] == 0.0 and tr.feasible.all()
        assert np.allclose(tr.cvals[:, 0], tr.x[:, 0])


class TestBatch:
    def test_worker_independence(self):
        cfg = SimConfig(4, 5, 99, "ivsmpc", X0)
        a = mcsim.traces_to_csv(simulate(dcdc_setup(), cfg, 1))
        b = mcsim.traces_to_csv(simulate(dcdc_setup(), cfg, 3))
        assert a == b

    def test_csv_roundtrip(self):
        import io
        traces = simulate(dcdc_setup(), SimConfig(3, 2, 5, "ivsmpc", X0))
        text = mcsim.traces_to_csv(traces)
        back = mcsim.read_traces(io.StringIO(text))
        assert mcsim.traces_to_csv(back) == text
        assert text.splitlines()[0].split(",")[:5] == ["run", "t", "x1", "x2", "u1"]

    def test_single_run_report(self):
        setup = dcdc_setup()
        cfg = SimConfig(5, 1, 1, "ivsmpc", X0)
        rep, traces = mcsim.monte_carlo(setup, cfg)
        tr = traces[0]
        assert rep.avg_cost == pytest.approx(tr.stage_cost.sum())
        assert np.allclose(rep.mean_trajectory, tr.x)
        assert rep.violation_rate[0] == list((tr.cvals[:, 0] > 2.0).astype(float))

    def test_lqr_violates(self):
        setup = dcdc_setup(scheme="lqr")
        traces = simulate(setup, SimConfig(50, 2000, 20230601, "lqr", X0))
        assert violation_rate(traces, 0, 2.0).max() > 0.1


class TestStatistics:
    @pytest.fixture(scope="class")
    @classmethod
    def traces(cls):
        return simulate(dcdc_setup(), SimConfig(30, 40, 11, "ivsmpc", X0))

    def test_violation_rate(self, traces):
        assert np.all(violation_rate(traces, 0, np.inf) == 0.0)
        rate = violation_rate(traces, 0, 2.0)
        assert rate.shape == (31,) and np.all((0 <= rate) & (rate <= 1))

    def test_cost_metrics(self, traces):
        avg, ratio, longrun = cost_metrics(traces, traces)
        assert ratio == 1.0
        zero = simulate(dcdc_setup(vw=0.0, scheme="lqr"), SimConfig(10, 2, 0, "lqr", (0.0, 0.0)))
        assert cost_metrics(zero)[0] == 0.0
        assert math.isnan(cost_metrics(traces)[1])

    def test_ecdf(self, traces):
        grid, vals, n = ecdf_conditioned(traces, 1.0 + 1e-9, 25)
        assert n == 40 * 25
        assert np.all(np.diff(vals) >= 0) and vals.min() >= 0 and vals.max() <= 1
        pooled = np.sort(np.concatenate([tr.x[1:26, 0] for tr in traces]))
        assert vals[-1] == np.mean(pooled <= grid[-1])
        _, _, n0 = ecdf_conditioned(traces, 1e-9, 25)
        assert n0 >= 40
        with pytest.raises(EmptyCondition):
            ecdf_conditioned(traces, 0.0, 25)

    def test_xi_distribution(self, traces):
        d = xi_distribution(traces)
        assert np.all(d["values"][:, 0] == 0.0)
        one = xi_distribution(traces[:1])
        assert np.array_equal(one["values"][1], traces[0].xi)
        assert d["histogram"].sum(axis=1).tolist() == [40] * 30

    def test_nearest_rank(self):
        vals = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
        assert nearest_rank(vals, 0.1) == 1
        assert nearest_rank(vals, 0.5) == 5
        assert nearest_rank(vals, 0.9) == 9
        assert nearest_rank(vals, 1.0) == 10
        assert nearest_rank([3.0], 0.1) == 3.0

    def test_ellipse(self):
        class T:
            def __init__(self, x):
                self.x = x[None, :]
        rng = np.random.default_rng(0)
        cov = np.array([[2.0, 0.6], [0.6, 0.5]])
        pts = rng.multivariate_normal([1.0, -1.0], cov, 100_000)
        mean, s, radius = confidence_ellipse([T(p) for p in pts], 0)
        assert radius == pytest.approx(2.14597, abs=1e-5)
        d = pts - mean
        cover = np.mean(np.einsum("ij,jk,ik->i", d, np.linalg.inv(s), d) <= radius ** 2)
        assert abs(cover - 0.9) <= 0.01
        circle = rng.standard_normal((100_000, 2))
        _, s_id, _ = confidence_ellipse([T(p) for p in circle], 0)
        assert np.allclose(s_id, np.eye(2), atol=0.02)
        with pytest.raises(SingularCovariance):
            confidence_ellipse([T(np.zeros(2)), T(np.ones(2)), T(2 * np.ones(2))], 0)

    def test_active_streak(self):
        slack = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0])
        assert mcsim.active_streak(slack) == (1, 3)
        assert mcsim.active_streak(np.ones(4)) == (-1, 0)
        assert mcsim.active_streak(np.r_[np.ones(7), np.zeros(9)], start_within=5) == (-1, 0)
