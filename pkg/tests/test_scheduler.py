import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_instance, make_params
from spotafl import privsec, scheduler
from spotafl.scheduler import Case
from spotafl.sysmodel import DeviceRound, Instance, Role, Schedule

U, J, O = Role.UPLOADER, Role.JAMMER, Role.OFFLINE
PERMISSIVE = dict(epsilon=1e6, upsilon=1e-9)


def test_psi_examples():
    inst = make_instance([1.0, 2.0], model_dim=10, sigma_b=1.0)
    assert scheduler.psi_objective(Schedule.from_binary([1, 1]), inst) == pytest.approx(10 / 9, abs=1e-9)
    inst = make_instance([1.0, 2.0, 3.0], model_dim=100, sigma_b=1.0)
    assert scheduler.psi_objective(Schedule.from_binary([1, 1, 0]), inst) == pytest.approx(127 / 9, abs=1e-9)
    assert scheduler.psi_objective(Schedule.from_binary([0, 0, 0]), inst) == math.inf
    with pytest.raises(scheduler.OfflineRolePresent):
        scheduler.psi_objective(Schedule((U, O, J)), inst)


@given(st.lists(st.floats(0.01, 10.0), min_size=1, max_size=8), st.floats(0.01, 100.0), st.data())
def test_psi_scaling_identity(p, c, data):
    a = data.draw(st.lists(st.integers(0, 1), min_size=len(p), max_size=len(p)))
    if not any(a):
        return
    inst = make_instance(p, model_dim=20, sigma_b=0.7)
    scaled = make_instance([c * x for x in p], model_dim=20, sigma_b=0.7)
    jam = sum(x * x for x, k in zip(p, a) if not k)
    up = sum(x for x, k in zip(p, a) if k)
    expected = (len(p) * c * c * jam + 20 * 0.7) / (c * c * up * up)
    assert scheduler.psi_objective(Schedule.from_binary(a), scaled) == pytest.approx(expected, rel=1e-9)


def test_privacy_constraint_examples():
    inst = make_instance([1.0], sigma_b=2.0, epsilon=12.0)
    assert scheduler.check_privacy_constraint(Schedule.from_binary([0]), inst)
    assert scheduler.check_privacy_constraint(Schedule.from_binary([1]), inst)
    inst = make_instance([1.0], sigma_b=2.0, epsilon=3.0)
    assert not scheduler.check_privacy_constraint(Schedule.from_binary([1]), inst)


def test_security_constraint_examples():
    inst = make_instance([1.0], grad_bound=10.0, sigma_e=1.0, upsilon=1.5)
    assert scheduler.check_security_constraint(Schedule.from_binary([1]), inst)
    inst = make_instance([1.0], grad_bound=10.0, sigma_e=1.0, upsilon=200.0)
    assert not scheduler.check_security_constraint(Schedule.from_binary([1]), inst)
    assert not scheduler.check_security_constraint(Schedule.from_binary([0]), inst)


def test_classify_case_examples():
    p_hat = 1.63299
    assert scheduler.classify_case(make_instance([0.5, 1.0]), p_hat) is Case.CASE1
    assert scheduler.classify_case(make_instance([1.0, 2.0]), p_hat) is Case.CASE2
    assert scheduler.classify_case(make_instance([2.0, 3.0]), p_hat) is Case.CASE3
    # ties follow the non-strict inequalities
    assert scheduler.classify_case(make_instance([1.0, p_hat]), p_hat) is Case.CASE1
    assert scheduler.classify_case(make_instance([p_hat, 3.0]), p_hat) is Case.CASE2


def test_policy1_examples():
    assert scheduler.policy1_select(make_instance([0.5, 2.0]), 1.0).roles == (U, O)
    assert scheduler.policy1_select(make_instance([0.5, 0.7]), 1.0).roles == (U, U)
    with pytest.raises(scheduler.EmptySelection):
        scheduler.policy1_select(make_instance([1.5, 2.0]), 1.0)


def test_policy1_falls_back_to_spa(rng):
    inst = make_instance([5.0, 6.0], epsilon=1.0)
    res = scheduler.schedule_round(inst, "policy1", rng)
    assert res.solver_name == "spa"


def test_esm_examples():
    res = scheduler.solve_esm(make_instance([1.0]))
    assert res.schedule.binary == (1,) and res.feasible
    res = scheduler.solve_esm(make_instance([1.0, 2.0], **PERMISSIVE))
    assert res.schedule.binary == (1, 1)
    res = scheduler.solve_esm(make_instance([1.0, 2.0], epsilon=1e-9))
    assert not res.feasible and res.schedule.binary == (0, 0)


def test_esm_cap():
    params = make_params(21)
    inst = Instance(tuple(DeviceRound.from_gains(1.0, 1.0, 1.0) for _ in range(21)), params)
    with pytest.raises(scheduler.TooLarge, match="spa"):
        scheduler.solve_esm(inst)


def brute_force_p1(inst):
    """Reference: plain Python loop over every vector with the documented tie-break."""
    n = inst.params.n_devices
    best = None
    for a in itertools.product((0, 1), repeat=n):
        s = Schedule.from_binary(a)
        if not scheduler.is_feasible(s, inst):
            continue
        key = (scheduler.psi_objective(s, inst), -sum(a), a)
        if best is None or key < best:
            best = key
    return best


def random_instance(rng, n, **kw):
    hb = rng.rayleigh(1.0, n) * math.sqrt(5)
    he = rng.rayleigh(1.0, n) * math.sqrt(5)
    return make_instance(list(hb), list(he), **kw)


@pytest.mark.parametrize("seed", range(30))
def test_esm_matches_python_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 9))
    inst = random_instance(rng, n, model_dim=int(rng.choice([1, 10, 1000])),
                           epsilon=float(rng.uniform(3, 20)), upsilon=float(rng.uniform(0.1, 3)))
    res = scheduler.solve_esm(inst)
    ref = brute_force_p1(inst)
    if ref is None:
        assert not res.feasible
    else:
        assert res.schedule.binary == ref[2]
        assert res.psi == ref[0]


def reference_spa(inst):
    """Plain-loop reference of the sorted greedy search; asserts the per-step invariant."""
    n = inst.params.n_devices
    order = sorted(range(n), key=lambda i: (inst.p_b[i], i))
    best, best_psi = [0] * n, math.inf
    for start in range(n):
        a = [0] * n
        for idx in order[start:]:
            a[idx] = 1
            if not scheduler.is_feasible(Schedule.from_binary(a), inst):
                a[idx] = 0
            assert not any(a) or scheduler.is_feasible(Schedule.from_binary(a), inst)
        psi = scheduler.psi_objective(Schedule.from_binary(a), inst)
        if psi <= best_psi:
            best, best_psi = a, psi
    return tuple(best), best_psi


@pytest.mark.parametrize("seed", range(40))
def test_spa_matches_reference(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(1, 12))
    inst = random_instance(rng, n, model_dim=int(rng.choice([1, 10, 1000])),
                           epsilon=float(rng.uniform(3, 20)), upsilon=float(rng.uniform(0.1, 3)))
    res = scheduler.solve_spa(inst)
    a, psi = reference_spa(inst)
    assert res.schedule.binary == a
    assert res.psi == psi


def test_spa_examples():
    inst = make_instance([0.5, 1.0, 2.0, 3.0], **PERMISSIVE)
    assert scheduler.solve_spa(inst).schedule.binary == (1, 1, 1, 1)
    # device 0 alone violates privacy with everyone else jamming, so it never uploads with all others jamming
    inst = make_instance([50.0, 1.0, 1.0], epsilon=12.0, model_dim=1000, upsilon=0.01)
    res = scheduler.solve_spa(inst)
    assert res.schedule.binary != (1, 0, 0)
    assert res.feasible


def test_spa_feasible_when_any_single_uploader_is(rng):
    for _ in range(200):
        n = int(rng.integers(1, 8))
        inst = random_instance(rng, n, epsilon=float(rng.uniform(2, 15)), upsilon=float(rng.uniform(0.5, 5)))
        single = any(scheduler.is_feasible(Schedule.from_binary([int(i == k) for i in range(n)]), inst)
                     for k in range(n))
        if single:
            assert scheduler.solve_spa(inst).feasible


def test_closed_form_examples():
    k = privsec.kappa(0.05)
    inst = make_instance([4.0, 3.0, 2.0, 1.0], grad_bound=6.5, upsilon=1.0, epsilon=7.0 * k, model_dim=1000)
    assert scheduler.closed_form_candidates(inst)[0].tolist() == [0, 1, 1, 0]
    assert [c.tolist() for c in scheduler.closed_form_candidates(inst)] == [[0, 1, 1, 0], [0, 0, 1, 1], [0, 0, 0, 1]]
    assert scheduler.solve_closed_form_highdim(inst).schedule.uploaders == [1, 2]
    with pytest.raises(scheduler.NoFeasibleUploader):
        scheduler.solve_closed_form_highdim(make_instance([4.0, 3.0], epsilon=1e-3))
    inst = make_instance([4.0, 3.0, 2.0, 1.0], grad_bound=1e9, epsilon=7.0 * k)
    assert [c.tolist() for c in scheduler.closed_form_candidates(inst)][0] == [0, 1, 1, 1]


def test_closed_form_in_dispatch_handles_no_uploader(rng):
    res = scheduler.schedule_round(make_instance([4.0, 3.0], epsilon=1e-3), "closed-form", rng)
    assert not res.feasible and res.schedule.uploaders == []


def test_random_solver():
    inst = make_instance([1.0, 2.0, 3.0], **PERMISSIVE)
    res = scheduler.solve_random(inst, np.random.default_rng(0))
    assert res.feasible and math.isfinite(res.psi)
    res = scheduler.solve_random(make_instance([1.0, 2.0], epsilon=1e-9), np.random.default_rng(0))
    assert not res.feasible
    a = scheduler.solve_random(inst, np.random.default_rng(9)).schedule
    b = scheduler.solve_random(inst, np.random.default_rng(9)).schedule
    assert a == b


def test_full_participation_and_unknown_choice(rng):
    inst = make_instance([1.0, 2.0])
    assert scheduler.schedule_round(inst, "full", rng).schedule.binary == (1, 1)
    with pytest.raises(ValueError):
        scheduler.schedule_round(inst, "genetic", rng)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["spa", "esm", "closed-form", "random", "full", "policy1"]))
def test_feasible_results_pass_both_constraints(seed, choice):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 8))
    inst = random_instance(rng, n, model_dim=int(rng.choice([1, 10, 1000])),
                           epsilon=float(rng.uniform(1, 20)), upsilon=float(rng.uniform(0.1, 3)),
                           security_count_all=bool(rng.integers(0, 2)))
    res = scheduler.schedule_round(inst, choice, rng)
    if res.feasible:
        assert scheduler.check_privacy_constraint(res.schedule, inst)
        assert scheduler.check_security_constraint(res.schedule, inst)


def test_metrics_psi_infinite_iff_no_uploader():
    inst = make_instance([1.0, 2.0])
    for a in itertools.product((0, 1), repeat=2):
        m = scheduler.schedule_metrics(Schedule.from_binary(a), inst)
        assert math.isinf(m.psi) == (m.uploader_count == 0)
