import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from predtrig.errors import ContractViolation
from predtrig.netsim import Aggregate, priority_exchange
from predtrig.scheduler import Schedule, TransmitDecision, apply_schedule, compute_schedule

QD = 7


def test_top_two_above_threshold():
    # the aggregate ranks ids 0-based; the two 12s win
    s = compute_schedule(priority_exchange([5, 12, 12, 0], 2), 2, QD)
    assert s.granted == (1, 2)


def test_tie_lowest_ids_win():
    s = compute_schedule(priority_exchange([12, 12, 12], 2), 2, QD)
    assert s.granted == (0, 1)


def test_all_below_threshold_empty():
    s = compute_schedule(priority_exchange([7, 3, 0, 7], 2), 2, QD)
    assert s.granted == () and s.below_threshold == (0, 3)


def test_threshold_is_strict():
    assert compute_schedule(priority_exchange([8, 7], 2), 2, QD).granted == (0,)


def test_incomplete_aggregate_rejected():
    agg = Aggregate((0, 1), (9, 9), (True, False, True))
    with pytest.raises(ContractViolation):
        compute_schedule(agg, 2, QD)


def test_apply_schedule_cases():
    s = Schedule(3, (1, 4))
    assert apply_schedule(1, s, True, 12, QD) == TransmitDecision(True, False)
    assert apply_schedule(1, s, False, 12, QD) == TransmitDecision(False, False)
    d = apply_schedule(4, s, True, 7, QD)
    assert not d.kappa and d.skip_mark
    assert apply_schedule(2, s, True, 15, QD) == TransmitDecision(False, False)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 15), min_size=1, max_size=40), st.integers(1, 10), st.data())
def test_schedule_invariants(prios, M_C, data):
    M_C = min(M_C, len(prios))
    agg = priority_exchange(prios, M_C)
    s = compute_schedule(agg, M_C, QD)
    assert len(s.granted) <= M_C and len(set(s.granted)) == len(s.granted)
    assert all(prios[i] > QD for i in s.granted)
    # every agent holding the aggregate computes the same schedule
    assert compute_schedule(priority_exchange(list(prios), M_C), M_C, QD) == s
    # nobody outside the grant set outranks a granted agent
    for i in s.granted:
        for j in range(len(prios)):
            if j not in s.granted and prios[j] > QD:
                assert (prios[i], -i) > (prios[j], -j)
    have = data.draw(st.lists(st.booleans(), min_size=len(prios), max_size=len(prios)))
    p0 = data.draw(st.lists(st.integers(0, 15), min_size=len(prios), max_size=len(prios)))
    kappa = [apply_schedule(i, s, have[i], p0[i], QD).kappa for i in range(len(prios))]
    assert sum(kappa) <= M_C
    assert not any(k and not h for k, h in zip(kappa, have))
