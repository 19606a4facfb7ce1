import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mecsim.analytic import Mm1Params, cpu_min, mm1_reliability, service_rate
from mecsim.engine import RngStream, sample_uniform
from mecsim.mobility import MobilityModel, Trajectories, random_waypoint
from mecsim.scenario import PROCESSORS, SERVICES, load_service
from mecsim.simnet import (
    Accounting,
    DelayTable,
    FifoLink,
    LinkBank,
    LinkModel,
    MecApp,
    Request,
    RunSetup,
    dispatch_response,
    fifo_schedule,
    mec_enqueue_and_serve,
    payload_bytes,
    simulate,
    transmit_downlink,
    transmit_uplink,
)

FAST = LinkModel(math.inf, math.inf, 0.0)


def make_setup(service, n, horizon, seed=7, mips=None, link=LinkModel()):
    spec = SERVICES[service]
    traj = random_waypoint(n, horizon, seed, MobilityModel())
    mips = PROCESSORS["id1"].mips / n if mips is None else mips
    return RunSetup(spec, n, mips, link, traj, seed, horizon)


def brute_neighbors(traj, center, radius, t):
    c = traj.position_at(center, t)
    out = set()
    for u in range(len(traj)):
        p = traj.position_at(u, t)
        if u != center and math.hypot(p.x - c.x, p.y - c.y) <= radius:
            out.add(u)
    return out


# -- links ------------------------------------------------------------------


def test_uplink_worked_example():
    n = 4
    bank = LinkBank(32e6 * n, n, 0.001)
    r = Request(2, 0, 0.0, 40000, 1.0)
    assert transmit_uplink(bank, r) == pytest.approx(0.011, rel=1e-12)


def test_downlink_worked_example():
    bank = LinkBank(250e3, 1, 0.001)
    t = transmit_downlink(bank, 0, 0.0, 313)
    assert t == pytest.approx(313 * 8 / 250e3 + 0.001, rel=1e-12)
    assert t == pytest.approx(0.011016, abs=1e-9)


def test_link_fifo_back_to_back():
    link = FifoLink(8e6, 0.001)  # 1 byte per microsecond
    a = link.transmit(0.0, 1000)
    b = link.transmit(0.0, 1000)
    assert a == pytest.approx(0.002)
    assert b == pytest.approx(0.003)
    # an idle gap resets the queue
    assert link.transmit(1.0, 1000) == pytest.approx(1.002)


def test_links_are_per_vehicle():
    bank = LinkBank(16e6, 2, 0.0)
    assert bank.transmit(0, 0.0, 1000) == pytest.approx(0.001)
    assert bank.transmit(1, 0.0, 1000) == pytest.approx(0.001)


def test_zero_payload_rejected():
    with pytest.raises(ValueError):
        FifoLink(1e6, 0.0).transmit(0.0, 0)
    assert payload_bytes(0.2) == 1
    assert payload_bytes(np.array([0.0, 1.5, 3.0])).tolist() == [1, 2, 3]


def test_link_model_validation():
    for kw in ({"uplink_capacity_bps": 0}, {"downlink_capacity_bps": -1}, {"base_latency_s": -1e-3}):
        with pytest.raises(ValueError):
            LinkModel(**kw)


# -- edge application -------------------------------------------------------


def test_mec_idle_processing_time():
    app = MecApp(0, 165130)
    start, end = mec_enqueue_and_serve(app, Request(0, 0, 0.0, 1, 500.0), 0.0)
    assert start == 0.0
    assert end == pytest.approx(500 / 165130, rel=1e-12)
    assert end * 1e3 == pytest.approx(3.028, abs=5e-4)


def test_mec_simultaneous_arrivals_fifo():
    app = MecApp(0, 1000.0)
    r1, r2 = Request(0, 0, 0.0, 1, 5.0), Request(0, 1, 0.0, 1, 2.0)
    _, e1 = mec_enqueue_and_serve(app, r1, 1.0)
    s2, e2 = mec_enqueue_and_serve(app, r2, 1.0)
    assert s2 - 1.0 == pytest.approx(0.005)
    assert e2 == pytest.approx(e1 + 0.002)
    assert app.busy_time == pytest.approx(0.007)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 10), st.floats(1e-4, 1.0)), min_size=1, max_size=40))
def test_fifo_schedule_matches_sequential(jobs):
    arr = np.sort(np.array([a for a, _ in jobs]))
    svc = np.array([s for _, s in jobs])
    start, end = fifo_schedule(arr, svc)
    free = 0.0
    for i in range(len(arr)):
        s = max(arr[i], free)
        free = s + svc[i]
        assert start[i] == pytest.approx(s, abs=1e-9)
        assert end[i] == pytest.approx(free, abs=1e-9)


def test_mean_sojourn_matches_mm1():
    spec = SERVICES["remote_driving"]
    alloc = cpu_min(spec)
    traj = random_waypoint(1, 10.0, 1, MobilityModel())
    out = simulate(RunSetup(spec, 1, alloc, FAST, traj, 11, 600.0))
    mu = service_rate(alloc, spec.ipr_mean_mi)
    expected = 1 / (mu - spec.uplink_rate_hz)
    assert expected == pytest.approx(0.004342944819032518, rel=1e-12)
    soj = out.requests.mec_sojourn_s
    assert np.nanmean(soj) == pytest.approx(expected, rel=0.05)


# -- sources and dispatch ---------------------------------------------------


def test_poisson_request_count():
    out = simulate(make_setup("remote_driving", 1, 180.0, seed=3, link=FAST))
    assert abs(len(out.requests) - 18000) <= 3 * math.sqrt(18000)


def test_zero_horizon_has_no_requests():
    for engine in ("batch", "event"):
        out = simulate(make_setup("cooperative_awareness", 2, 0.0), engine)
        assert len(out.requests) == 0 and len(out.records) == 0


def test_request_timestamps_repeat_for_a_seed():
    a = simulate(make_setup("cooperative_sensing", 3, 20.0, seed=5))
    b = simulate(make_setup("cooperative_sensing", 3, 20.0, seed=5))
    assert np.array_equal(a.requests.created_at, b.requests.created_at)
    c = simulate(make_setup("cooperative_sensing", 3, 20.0, seed=6))
    assert not np.array_equal(a.requests.created_at[:10], c.requests.created_at[:10])


def test_client_server_single_delivery():
    spec = SERVICES["remote_driving"]
    traj = random_waypoint(3, 10, 1, MobilityModel())
    r = Request(1, 0, 0.0, 10, 1.0)
    assert dispatch_response(r, spec, 5.0, traj, RngStream(1, 0, 1, "radius")) == [1]
    out = simulate(make_setup("remote_driving", 3, 20.0))
    done = out.requests.copies >= 0
    assert np.all(out.requests.copies[done] == 1)


def test_dissemination_without_neighbors():
    spec = SERVICES["cooperative_awareness"]
    traj = Trajectories([([0.0], [0.0], [0.0]), ([0.0], [999.0], [999.0])])
    r = Request(0, 0, 0.0, 10, 1.0)
    assert dispatch_response(r, spec, 1.0, traj, RngStream(1, 0, 0, "radius")) == [0]


def test_dissemination_counts_match_brute_force():
    setup = make_setup("cooperative_awareness", 12, 15.0, seed=4)
    spec = setup.spec
    out = simulate(setup)
    req = out.requests
    for v in range(setup.n_vehicles):
        mine = np.flatnonzero((req.source == v) & (req.copies >= 0))
        mine = mine[np.argsort(req.seq[mine])]
        radii = sample_uniform(setup.stream(v, "radius"), 0.0, spec.dissemination_radius_max_m, len(mine))
        for i, rad in zip(mine, radii):
            expect = 1 + len(brute_neighbors(setup.trajectories, v, rad, req.service_end[i]))
            assert req.copies[i] == expect


# -- whole-run invariants ---------------------------------------------------


@pytest.mark.parametrize("service,n", [("remote_driving", 3), ("cooperative_sensing", 4),
                                       ("cooperative_maneuver", 10), ("cooperative_awareness", 8)])
def test_event_and_batch_drivers_agree(service, n):
    setup = make_setup(service, n, 12.0, seed=9)
    a, b = simulate(setup, "event"), simulate(setup, "batch")
    ra, rb = a.records.sorted(), b.records.sorted()
    for col in ("source", "seq", "destination"):
        assert np.array_equal(getattr(ra, col), getattr(rb, col))
    assert np.allclose(ra.e2e_s, rb.e2e_s, rtol=0, atol=1e-9)
    assert np.array_equal(ra.deadline_met, rb.deadline_met)
    qa, qb = a.requests.sorted(), b.requests.sorted()
    assert np.array_equal(qa.copies, qb.copies)
    assert np.array_equal(qa.delivered, qb.delivered)
    assert np.allclose(a.busy_time_s, b.busy_time_s, rtol=1e-12, atol=0)
    assert a.events_dispatched > 0


def test_delay_conservation_and_deadline_flag():
    setup = make_setup("cooperative_maneuver", 20, 20.0)
    rec = simulate(setup).records
    parts = rec.uplink_s + rec.mec_queue_s + rec.mec_processing_s + rec.downlink_s
    assert np.array_equal(parts, rec.e2e_s)
    for col in (rec.uplink_s, rec.mec_queue_s, rec.mec_processing_s, rec.downlink_s):
        assert np.all(col >= 0)
    assert np.array_equal(rec.deadline_met, rec.e2e_s <= setup.spec.requirement.d_req)
    first = next(iter(rec))
    assert first.e2e_s == pytest.approx(first.uplink_s + first.mec_queue_s + first.mec_processing_s + first.downlink_s)


def test_work_conservation():
    setup = make_setup("cooperative_sensing", 5, 30.0)
    out = simulate(setup, "event")
    req = out.requests
    done = ~np.isnan(req.service_end)
    for v in range(setup.n_vehicles):
        mine = done & (req.source == v)
        expected = float(np.sum(req.ipr_mi[mine])) / setup.allocated_mips
        assert out.busy_time_s[v] == pytest.approx(expected, rel=1e-9)


def test_reliability_bounded_by_mm1():
    spec = SERVICES["remote_driving"]
    alloc = cpu_min(spec) * 1.2
    traj = random_waypoint(1, 10.0, 1, MobilityModel())
    out = simulate(RunSetup(spec, 1, alloc, LinkModel(), traj, 2, 200.0))
    measured = float(np.mean(out.records.deadline_met))
    bound = mm1_reliability(Mm1Params(spec.uplink_rate_hz, service_rate(alloc, spec.ipr_mean_mi)), spec.requirement.d_req)
    sigma = math.sqrt(bound * (1 - bound) / len(out.records))
    assert measured <= bound + 3 * sigma


def test_inflight_units():
    setup = make_setup("cooperative_awareness", 6, 10.0, mips=2000.0)
    out = simulate(setup)
    created, units = out.inflight()
    req = out.requests
    assert len(created) > 0
    assert units.sum() == np.sum(np.where(req.copies < 0, 1, req.copies - req.delivered))


def test_empty_delay_table():
    t = DelayTable.empty()
    assert len(t) == 0 and list(t) == []


def test_simulate_rejects_unknown_engine():
    with pytest.raises(ValueError):
        simulate(make_setup("remote_driving", 1, 1.0), "nope")


def test_run_setup_validation():
    traj = random_waypoint(1, 1.0, 1, MobilityModel())
    spec = load_service("remote_driving")
    with pytest.raises(ValueError):
        RunSetup(spec, 2, 1.0, LinkModel(), traj, 1, 1.0)
    with pytest.raises(ValueError):
        RunSetup(spec, 1, 0.0, LinkModel(), traj, 1, 1.0)
    assert Accounting("per_request") is Accounting.PER_REQUEST
