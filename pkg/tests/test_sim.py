import io
import math

import numpy as np
import pytest
from scipy import stats

from gminf import analytic as an
from gminf.core import ArrivalModel, CutLaw, Discipline, ModelParams, RngStream
from gminf.sim import (AGGREGATED, ARRIVAL, DEPARTURE, PER_CUSTOMER, QueuePath, ReplicationError, Stop,
                       batch_pmfs, busy_periods, departure_records, merge, read_path_csv, replicate,
                       simulate, time_average_pmf)

EXP = ArrivalModel.exponential(1.0)
DET = ArrivalModel.deterministic(1.0)
P1 = ModelParams.from_rho(1.0)


def manual_path():
    # q: 0 -> 1 -> 2 -> 0 -> 1 -> 0, horizon 10
    t = np.array([1.0, 2.0, 3.0, 5.0, 6.0])
    q = np.array([1, 2, 0, 1, 0])
    kind = np.array([ARRIVAL, ARRIVAL, DEPARTURE, ARRIVAL, DEPARTURE], dtype=np.int8)
    batch = np.array([0, 0, 2, 0, 1])
    return QueuePath(t, q, 0, 10.0, kind, batch, batch.copy())


def test_stop_needs_a_limit():
    with pytest.raises(ValueError):
        Stop()
    with pytest.raises(ValueError):
        Stop(events=0)
    with pytest.raises(ValueError):
        Stop(horizon=-1.0)


def test_first_event_is_an_arrival_from_empty():
    for seed in range(20):
        p = simulate(P1, EXP, Discipline.fifo(), Stop(events=5), RngStream(seed))
        assert p.kind[0] == ARRIVAL and p.q[0] == 1


def test_deterministic_arrivals_land_on_the_lattice():
    p = simulate(ModelParams.from_rho(3.0, lam=2.0), ArrivalModel.deterministic(0.5), Discipline.lifo(),
                 Stop(horizon=50.0), RngStream(1))
    assert np.allclose(p.arrival_times(), 0.5 * np.arange(1, 101), rtol=0, atol=1e-12)


@pytest.mark.parametrize("engine", [AGGREGATED, PER_CUSTOMER])
def test_fifo_and_lifo_batch_mechanics(engine):
    for disc in (Discipline.fifo(), Discipline.lifo()):
        p = simulate(ModelParams.from_rho(5.0), EXP, disc, Stop(events=5000), RngStream(2), engine=engine)
        _, qs = p.steps
        before = qs[:-1]
        dep = p.kind == DEPARTURE
        assert np.all(p.q[~dep] == before[~dep] + 1)
        assert np.all(p.batch[dep] >= 1)
        assert np.all(p.q[dep] == before[dep] - p.batch[dep])
        pos = p.position[dep]
        assert np.all((pos >= 1) & (pos <= before[dep]))
        if disc.kind == "fifo":
            assert np.array_equal(p.batch[dep], pos)
        else:
            assert np.array_equal(p.q[dep], pos - 1)


def test_general_fraction_with_fixed_cut():
    cut = CutLaw.fixed(0.25)
    p = simulate(ModelParams.from_rho(20.0), EXP, Discipline.general(cut), Stop(events=20000), RngStream(3))
    _, qs = p.steps
    dep = p.kind == DEPARTURE
    before = qs[:-1][dep]
    assert np.array_equal(p.q[dep], np.minimum(np.floor(0.25 * before).astype(int), before - 1))


def test_uniform_cut_survivor_law():
    # survivors floor(U q) are uniform on 0..q-1, as for a uniformly placed completer
    p = simulate(ModelParams.from_rho(100.0), EXP, Discipline.general(CutLaw.uniform()),
                 Stop(events=400_000), RngStream(4))
    _, qs = p.steps
    dep = p.kind == DEPARTURE
    before, after = qs[:-1][dep], p.q[dep]
    for q in range(5, 16):
        sel = after[before == q]
        if len(sel) < 200:
            continue
        counts = np.bincount(sel, minlength=q)
        assert stats.chisquare(counts).pvalue > 1e-4


def test_per_customer_rejects_general():
    with pytest.raises(ValueError):
        simulate(P1, EXP, Discipline.general(CutLaw.uniform()), Stop(events=10), RngStream(0),
                 engine=PER_CUSTOMER)
    with pytest.raises(ValueError):
        simulate(P1, EXP, Discipline.fifo(), Stop(events=10), RngStream(0), engine="bogus")
    with pytest.raises(ValueError):
        simulate(P1, EXP, Discipline.fifo(), Stop(events=10), RngStream(0), q0=-1)


def test_arrival_mean_must_match_lambda():
    with pytest.raises(ValueError):
        simulate(ModelParams(2.0, 1.0), EXP, Discipline.fifo(), Stop(events=10), RngStream(0))
    simulate(ModelParams(2.0, 1.0), EXP.scaled_to(2.0), Discipline.fifo(), Stop(events=10), RngStream(0))


def test_horizon_stop_and_value():
    p = simulate(P1, EXP, Discipline.lifo(), Stop(horizon=100.0), RngStream(5))
    assert p.horizon == 100.0 and p.t[-1] <= 100.0
    assert p.value(0.0) == 0
    assert p.value(p.t[0]) == 1
    assert p.value(100.0) == p.q[-1]


def test_event_and_busy_period_stops():
    p = simulate(P1, EXP, Discipline.fifo(), Stop(events=123), RngStream(6))
    assert len(p.t) == 123
    p = simulate(P1, EXP, Discipline.fifo(), Stop(busy_periods=50), RngStream(6))
    assert len(busy_periods(p)) == 50 and p.q[-1] == 0


def test_departure_period_stop():
    p = simulate(ModelParams.from_rho(30.0), EXP, Discipline.fifo(), Stop(departure_periods=7), RngStream(7))
    recs = departure_records(p)
    assert len(recs) == 7
    assert p.kind[-1] == ARRIVAL


def test_replay_is_bit_identical():
    a = simulate(P1, DET, Discipline.fifo(), Stop(events=1000), RngStream(8, 3))
    b = simulate(P1, DET, Discipline.fifo(), Stop(events=1000), RngStream(8, 3))
    assert np.array_equal(a.t, b.t) and np.array_equal(a.q, b.q)


def test_long_run_crosses_chunk_boundaries():
    p = simulate(P1, EXP, Discipline.fifo(), Stop(events=300_000), RngStream(9))
    assert len(p.t) == 300_000
    assert np.all(np.diff(p.t) >= 0)
    _, qs = p.steps
    steps = np.diff(qs)
    assert np.all((steps == 1) == (p.kind == ARRIVAL))


def test_keep_events_false_drops_log():
    p = simulate(P1, EXP, Discipline.fifo(), Stop(events=100), RngStream(0), keep_events=False)
    assert not p.has_events
    with pytest.raises(ValueError):
        departure_records(p)
    with pytest.raises(ValueError):
        p.csv_text()
    assert len(time_average_pmf(p, 0.0, 5)) == 6


def test_manual_path_extractors():
    p = manual_path()
    assert np.allclose(busy_periods(p), [2.0, 1.0])
    pmf = time_average_pmf(p, 0.0, 3)
    assert np.allclose(pmf, [(1 + 2 + 4) / 10, (1 + 1) / 10, 1 / 10, 0.0])
    assert time_average_pmf(p, 4.0, 1) == pytest.approx([5 / 6, 1 / 6])
    rows = batch_pmfs(p, 0.0, 2, 2)
    assert np.allclose(rows, [[0.6, 0.2, 0.2], [0.8, 0.2, 0.0]])
    assert np.allclose(rows.mean(axis=0), time_average_pmf(p, 0.0, 2))
    with pytest.raises(ValueError):
        time_average_pmf(p, 10.0, 3)


def test_manual_path_departure_records():
    recs = departure_records(manual_path())
    # departure at 3 sits in period 3 = (2, 5); the one at 6 has no closing arrival
    assert len(recs) == 1
    r = recs[0]
    assert (r.l, r.period, r.pre, r.post, r.last_departure, r.single) == (1, 3, 2, 0, 3.0, True)


def test_busy_period_in_progress_is_discarded():
    p = manual_path()
    p2 = QueuePath(p.t, p.q + 1, 1, 10.0, p.kind, p.batch, p.position)
    assert len(busy_periods(p2)) == 0


@pytest.mark.parametrize("disc", [Discipline.fifo(), Discipline.lifo()])
def test_departure_record_invariants(disc):
    p = simulate(ModelParams.from_rho(200.0), EXP, disc, Stop(horizon=5000.0), RngStream(10))
    recs = departure_records(p)
    assert len(recs) > 50
    arr = p.arrival_times()
    for r in recs:
        assert r.post < r.pre + 1
        lo = 0.0 if r.period == 1 else arr[r.period - 2]
        assert lo < r.last_departure < arr[r.period - 1]
    assert all(b.period > a.period for a, b in zip(recs, recs[1:]))
    assert [r.l for r in recs] == list(range(1, len(recs) + 1))


def test_post_below_pre_plus_arrivals():
    # with one arrival per period the post level never exceeds the pre level
    p = simulate(ModelParams.from_rho(50.0), DET, Discipline.fifo(), Stop(horizon=2000.0), RngStream(11))
    assert all(r.post < r.pre for r in departure_records(p) if r.period > 1)


def test_stationary_pmf_matches_exact():
    params = ModelParams.from_rho(2.0)
    p = simulate(params, EXP, Discipline.lifo(), Stop(horizon=2e5), RngStream(12), keep_events=False)
    rows = batch_pmfs(p, 100.0, 8, 50)
    est, se = rows.mean(axis=0), rows.std(axis=0, ddof=1) / math.sqrt(50)
    exact = an.stationary_pmf_vector(8, 2.0, EXP)
    assert np.all(np.abs(est - exact) < 4.5 * se + 1e-6)


def test_engines_agree_in_law():
    paths = [simulate(P1, DET, Discipline.fifo(), Stop(events=100_000), RngStream(13, i), engine=e)
             for i, e in enumerate((AGGREGATED, PER_CUSTOMER))]
    p, q = (time_average_pmf(x, 0.0, 30) for x in paths)
    assert 0.5 * np.abs(p - q).sum() < 0.01
    a, b = (busy_periods(x) for x in paths)
    assert stats.ks_2samp(a, b).pvalue > 1e-3


def test_per_customer_from_nonempty_start():
    p = simulate(ModelParams.from_rho(4.0), EXP, Discipline.lifo(), Stop(events=200), RngStream(14),
                 q0=10, engine=PER_CUSTOMER)
    _, qs = p.steps
    assert qs[0] == 10 and np.all(qs >= 0)


def test_replicate_ordering_and_threads():
    def job(rng, i):
        return simulate(P1, EXP, Discipline.fifo(), Stop(events=500), rng).t[-1]

    serial = replicate(16, 77, job)
    threaded = replicate(16, 77, job, workers=4)
    assert serial == threaded
    assert len(set(serial)) == 16
    assert np.array_equal(merge([[1.0], np.array([2.0, 3.0])]), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        replicate(0, 1, job)


def test_replicate_reports_failing_index():
    def job(rng, i):
        if i == 3:
            raise RuntimeError("boom")
        return i

    with pytest.raises(ReplicationError) as info:
        replicate(5, 0, job, workers=2)
    assert info.value.index == 3


def test_csv_round_trip():
    p = simulate(ModelParams.from_rho(3.0), EXP, Discipline.lifo(), Stop(events=2000), RngStream(15))
    text = p.csv_text("hdr")
    assert text.startswith("# hdr\nt,kind,q_after,batch_size\n")
    back = read_path_csv(io.StringIO(text))
    assert np.array_equal(back.t, p.t)
    assert np.array_equal(back.q, p.q)
    assert np.array_equal(back.kind, p.kind)
    assert np.array_equal(back.batch, p.batch)
    assert [r.post for r in departure_records(back)] == [r.post for r in departure_records(p)]
