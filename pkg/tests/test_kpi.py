"""Adaptive threshold loop: ratchet formulas, quantization and full plans."""

import json
import math

import numpy as np
import pytest

from helpers import DU_LTE, DU_NR, desk_instance, make_tier, ring_positions
from radioplan.convex_core import SolverConfig
from radioplan.kpi import (
    PlanConfig,
    PlanState,
    evaluate_plan,
    plan,
    quantize,
    update_thresholds,
)
from radioplan.model import Position, Topology, check_deployment
from radioplan.peb import precompute_geometry
from radioplan.routines import throughput_routine


def make_state(mu=10.0, r0=50.0, b0=4.0, prev_r=None, prev_b=None):
    return PlanState(
        mu=mu, r0=r0, b0=b0,
        prev_r=r0 if prev_r is None else prev_r,
        prev_b=b0 if prev_b is None else prev_b,
        floor_zeta_b=0.05, cap_zeta_b=100.0,
    )


class TestUpdateThresholds:
    def test_rate_formula(self):
        state = make_state(mu=10.0, r0=50.0, prev_r=20.0)
        zeta = update_thresholds(state, "rate")
        assert state.omega_r == pytest.approx(0.5)
        assert zeta == pytest.approx(25.0)

    def test_peb_formula(self):
        state = make_state(b0=4.0, prev_b=2.0)
        zeta = update_thresholds(state, "peb")
        assert state.omega_b == pytest.approx(0.5)
        assert zeta == pytest.approx(2.0)

    def test_rate_clamped_at_zero(self):
        state = make_state(mu=10.0, prev_r=5.0)  # prev below mu: negative ratio
        assert update_thresholds(state, "rate") == 0.0

    def test_peb_clamped_to_floor(self):
        state = make_state(prev_b=0.5)  # (b-1)/b < 0
        assert update_thresholds(state, "peb") == pytest.approx(0.05)

    def test_rate_clamped_to_bootstrap(self):
        state = make_state(mu=0.0, prev_r=80.0, r0=50.0)
        assert update_thresholds(state, "rate") == pytest.approx(50.0)


class TestQuantize:
    def setup_case(self):
        topo = desk_instance(11, n_sites=4, n_test=3, n_enbs=2, budget=2)
        return topo, precompute_geometry(topo)

    def test_binary_fixed_point(self):
        topo, geom = self.setup_case()
        x_hat = np.array([1.0, 0.0, 1.0, 0.0])
        A_hat = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 0, 0, 0]], dtype=float)
        x_star, A_star = quantize(x_hat, A_hat, 0.1, topo, geom)
        np.testing.assert_array_equal(x_star, [1, 0, 1, 0])
        np.testing.assert_array_equal(A_star, A_hat.astype(int))

    def test_zero_relaxation_falls_back_to_lte(self):
        topo, geom = self.setup_case()
        x_star, A_star = quantize(np.zeros(4), np.zeros((3, 4)), 0.1, topo, geom)
        assert x_star.sum() == topo.budget  # top-G of a zero vector still rounds
        assert A_star.sum() == 0

    def test_rows_match_sinr_argmax(self):
        topo, geom = self.setup_case()
        rng = np.random.default_rng(3)
        x_hat = rng.uniform(0, 1, 4)
        A_hat = rng.uniform(0, 1, (3, 4))
        x_star, A_star = quantize(x_hat, A_hat, 0.1, topo, geom)
        check_deployment(topo, x_star, A_star)
        xf = x_star.astype(float)
        total = geom.gains @ xf
        col_peak = A_hat.max(axis=0)
        for t in range(3):
            keep = [
                j for j in range(4)
                if A_hat[t, j] > 0.1 * col_peak[j] and x_star[j] == 1 and A_hat[t, j] > 0
            ]
            if not keep:
                assert A_star[t].sum() == 0
                continue
            sinrs = [
                geom.gains[t, j] / (total[t] - geom.gains[t, j] * xf[j] + geom.n_prime)
                for j in keep
            ]
            expected = keep[int(np.argmax(sinrs))]
            assert A_star[t, expected] == 1

    def test_pruned_association_respects_deployment(self):
        topo, geom = self.setup_case()
        x_hat = np.array([0.9, 0.8, 0.1, 0.2])
        A_hat = np.array(
            [[0.0, 0.0, 0.9, 0.0], [0.5, 0.4, 0.0, 0.0], [0.0, 0.0, 0.0, 0.9]]
        )
        x_star, A_star = quantize(x_hat, A_hat, 0.1, topo, geom)
        np.testing.assert_array_equal(x_star, [1, 1, 0, 0])
        assert A_star[0].sum() == 0 and A_star[2].sum() == 0  # pruned to legacy
        assert A_star[1].sum() == 1


class TestPlan:
    def test_mu_zero_matches_bootstrap_rate(self):
        topo = desk_instance(0)
        geom = precompute_geometry(topo)
        cfg = PlanConfig(mu=0.0, solver=SolverConfig(seed=0))
        res = plan(topo, cfg, geom=geom)
        boot = throughput_routine(
            topo, geom, 10.0 * float(geom.u[np.isfinite(geom.u)].max()),
            cfg=SolverConfig(seed=0),
        )
        r0 = boot.rates.min() / 1e6
        assert res.converged
        assert res.min_rate_mbps >= r0 * 0.95 - 0.5

    def test_degenerate_full_budget_invariant_to_mu(self):
        topo = desk_instance(9, n_sites=3, n_test=4, n_enbs=2, budget=3)
        geom = precompute_geometry(topo)
        plans = [
            plan(topo, PlanConfig(mu=mu, solver=SolverConfig(seed=1)), geom=geom)
            for mu in (0.0, 10.0)
        ]
        for p in plans:
            np.testing.assert_array_equal(p.x_star, [1, 1, 1])

    def test_deterministic_given_seed(self):
        topo = desk_instance(4)
        geom = precompute_geometry(topo)
        cfg = PlanConfig(mu=10.0, solver=SolverConfig(seed=7), max_tau=3)
        a = plan(topo, cfg, geom=geom)
        b = plan(topo, cfg, geom=geom)
        assert a.to_json() == b.to_json()

    def test_result_invariants_even_without_convergence(self):
        topo = desk_instance(6)
        geom = precompute_geometry(topo)
        cfg = PlanConfig(mu=50.0, solver=SolverConfig(seed=2), max_tau=1)
        res = plan(topo, cfg, geom=geom)
        res.validate(topo)
        assert res.x_star.sum() <= topo.budget
        assert (res.A_star.sum(axis=1) <= 1).all()
        assert res.n_iterations >= 1
        assert isinstance(res.trace, list) and res.trace[0]["stage"] == "bootstrap"

    def test_json_round_trip_fields(self):
        topo = desk_instance(8, n_sites=4, n_test=4, n_enbs=2, budget=2)
        res = plan(topo, PlanConfig(mu=5.0, solver=SolverConfig(seed=3), max_tau=2))
        payload = json.loads(res.to_json())
        assert payload["schema_version"] == 1
        assert len(payload["rates_mbps"]) == topo.n_test_points
        assert set(payload["tier"]) <= {"nr", "lte", "none"}
        csv_text = res.to_csv(topo)
        assert csv_text.splitlines()[0] == "x_m,y_m,tier,rate_mbps,peb_m"
        assert len(csv_text.splitlines()) == topo.n_test_points + 1
