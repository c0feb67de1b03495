import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homwave.cell import solve_cell, two_phase
from homwave.elliptic import Corrector, assemble, laplacian, resolvent_gap
from homwave.grid import State, make_grid, norm
from homwave.rates import fit_rate
from homwave.wave import (BlowUpError, Nonlinearity, WaveSystem, energy, energy_norm, evolve,
                          force_field, smooth_field, smooth_initial_data, step, trajectory_gap,
                          trajectory_rate_study)

ZERO, CUBIC = Nonlinearity("zero"), Nonlinearity("cubic")


def unit_system(n=256, gamma=0.5, f=ZERO, g=0.0, dt=None, bc="dirichlet"):
    grid = make_grid(1, 1.0, n, bc)
    op = assemble(np.array([[1.0]]), None, grid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return WaveSystem(op, gamma, f, g, dt or 0.5 / n)


def sine_state(grid, k=1):
    return State.from_arrays(grid, np.sin(k * np.pi * grid.coords()[:, 0]), np.zeros(grid.ndof))


# ----------------------------------------------------------- nonlinearity

@pytest.mark.parametrize("f", [ZERO, CUBIC, Nonlinearity("cubic_minus_linear", 20.0),
                               Nonlinearity("cubic_minus_linear", 0.5)])
def test_nonlinearity_bounds(f):
    assert all(f.check().values())


def test_nonlinearity_validation():
    with pytest.raises(ValueError):
        Nonlinearity("quintic")
    with pytest.raises(ValueError):
        Nonlinearity("cubic", 1.0)


@given(st.floats(-50, 50), st.floats(0, 30))
def test_antiderivative(s, lam):
    f = Nonlinearity("cubic_minus_linear", lam)
    from scipy.integrate import quad
    assert np.isclose(f.F(s), quad(lambda r: float(f.f(r)), 0, s)[0], rtol=1e-9, atol=1e-9)


# ------------------------------------------------------------------ steps

def test_zero_stays_zero():
    sys = unit_system(64)
    z = State.from_arrays(sys.grid, np.zeros(sys.grid.ndof), np.zeros(sys.grid.ndof))
    assert np.all(evolve(sys, z, 1.0).last.vector() == 0)


def test_undamped_energy_conservation():
    sys = unit_system(128, gamma=0.0)
    st_ = State.from_arrays(sys.grid, smooth_field(sys.grid, np.random.default_rng(0)),
                            smooth_field(sys.grid, np.random.default_rng(1)))
    e0 = energy(sys, st_)
    for _ in range(200):
        nxt = step(sys, st_)
        e1 = energy(sys, nxt)
        assert abs(e1 - e0) <= 10 * sys.tol * e0
        st_, e0 = nxt, e1


def test_damped_mode_matches_analytic():
    sys = unit_system(256, gamma=0.5, dt=1 / 512)
    T, g = 2.0, 0.5
    w = np.sqrt(np.pi**2 - g**2 / 4)
    amp = np.exp(-g * T / 2) * (np.cos(w * T) + g / (2 * w) * np.sin(w * T))
    x = sys.grid.coords()[:, 0]
    u = evolve(sys, sine_state(sys.grid), T).last.u.values
    assert np.max(np.abs(u - amp * np.sin(np.pi * x))) < 1e-2


def test_second_order_in_time():
    # semi-discrete modal oracle: the spatial operator's own eigenvalue
    n, g, T = 64, 0.5, 1.0
    lam = (4 * n**2) * np.sin(np.pi / (2 * n)) ** 2
    w = np.sqrt(lam - g**2 / 4)
    amp = np.exp(-g * T / 2) * (np.cos(w * T) + g / (2 * w) * np.sin(w * T))
    errs = []
    for dt in (1 / 64, 1 / 128, 1 / 256):
        sys = unit_system(n, gamma=g, dt=dt)
        u = evolve(sys, sine_state(sys.grid), T).last.u.values
        errs.append(np.max(np.abs(u - amp * np.sin(np.pi * sys.grid.coords()[:, 0]))))
    assert errs[0] / errs[1] >= 3.5 and errs[1] / errs[2] >= 3.5


def test_evolve_zero_time():
    sys = unit_system(32)
    xi = sine_state(sys.grid)
    tr = evolve(sys, xi, 0.0)
    assert len(tr) == 1 and np.array_equal(tr[0].vector(), xi.vector())


def test_semigroup_property_is_exact():
    sys = unit_system(64, f=CUBIC, g=1.0)
    xi = sine_state(sys.grid)
    a = evolve(sys, xi, 1.0).last
    b = evolve(sys, evolve(sys, xi, 0.375).last, 0.625).last
    assert np.array_equal(a.vector(), b.vector())


def test_sampling_times():
    sys = unit_system(32)
    tr = evolve(sys, sine_state(sys.grid), 1.0, sample_every=0.25)
    assert np.allclose(tr.times, [0, 0.25, 0.5, 0.75, 1.0])


def test_dt_must_not_exceed_h():
    grid = make_grid(1, 1.0, 16, "dirichlet")
    with pytest.raises(ValueError):
        WaveSystem(assemble(np.array([[1.0]]), None, grid), 0.5, ZERO, 0.0, 0.1)


def test_blow_up_guard():
    sys = unit_system(32, f=CUBIC)
    xi = State.from_arrays(sys.grid, 1e6 * np.sin(np.pi * sys.grid.coords()[:, 0]), np.zeros(sys.grid.ndof))
    with pytest.raises(BlowUpError):
        evolve(sys, xi, 0.5)


def test_damped_linear_energy_is_non_increasing():
    sys = unit_system(128, gamma=0.5)
    st_ = State.from_arrays(sys.grid, smooth_field(sys.grid, np.random.default_rng(2)),
                            smooth_field(sys.grid, np.random.default_rng(3)))
    e0 = energy(sys, st_)
    for _ in range(200):
        st_ = step(sys, st_)
        e1 = energy(sys, st_)
        assert e1 <= e0 + 10 * sys.tol * abs(e0)
        e0 = e1


def test_zero_energy():
    sys = unit_system(32)
    z = State.from_arrays(sys.grid, np.zeros(sys.grid.ndof), np.zeros(sys.grid.ndof))
    assert energy(sys, z) == 0.0


@pytest.mark.parametrize("f", [CUBIC, Nonlinearity("cubic_minus_linear", 4.0)])
def test_energy_lower_bound(f):
    sys = unit_system(128, gamma=0.5, f=f)
    mu = 0.1
    rng = np.random.default_rng(5)
    for _ in range(3):
        xi = State.from_arrays(sys.grid, 3 * smooth_field(sys.grid, rng), 3 * smooth_field(sys.grid, rng))
        for s in evolve(sys, xi, 4.0, sample_every=0.125):
            assert energy(sys, s) >= -f.K_mu(mu) * 1.0 - mu * norm(s.u, "L2") ** 2


def random_ball_state(grid, rng, radius):
    xi = State.from_arrays(grid, smooth_field(grid, rng), smooth_field(grid, rng))
    return State.from_arrays(grid, *(c * radius * rng.random() / energy_norm(xi) for c in (xi.u.values, xi.v.values)))


def test_dissipative_bound():
    sys = unit_system(128, gamma=0.5, f=CUBIC, g=1.0)
    rng = np.random.default_rng(11)
    sups, late = [], []
    for _ in range(10):
        tr = evolve(sys, random_ball_state(sys.grid, rng, 5.0), 20.0, sample_every=0.25)
        nrm = np.array([energy_norm(s) for s in tr])
        sups.append(nrm.max())
        late.append(nrm[tr.times >= 15].max())
    M = max(sups)
    assert np.isfinite(M) and M <= 10.0
    # absorbed: late-time size forgets the initial size
    assert max(late) <= 1.05 * min(late) + 0.05


@settings(max_examples=6)
@given(st.floats(0.1, 1.0), st.floats(-1.0, 1.0), st.floats(0.0, 5.0), st.integers(0, 2**31 - 1))
def test_no_blow_up_in_default_box(gamma, gamp, radius, seed):
    sys = unit_system(64, gamma=gamma, f=CUBIC, g=gamp)
    xi = random_ball_state(sys.grid, np.random.default_rng(seed), radius)
    assert np.isfinite(evolve(sys, xi, 50.0).last.vector()).all()


def test_lipschitz_in_eminus1():
    sys = unit_system(128, gamma=0.5, f=CUBIC, g=1.0)
    ref = laplacian(sys.grid)
    rng = np.random.default_rng(21)
    times = np.array([0.5, 1.0, 2.0])
    fits = []
    for _ in range(8):
        a, b = random_ball_state(sys.grid, rng, 3.0), random_ball_state(sys.grid, rng, 3.0)
        d0 = norm(State.from_arrays(sys.grid, a.u.values - b.u.values, a.v.values - b.v.values), "Eminus1", ref)
        ta, tb = evolve(sys, a, 2.0, 0.5), evolve(sys, b, 2.0, 0.5)
        r = []
        for sa, sb in zip(ta, tb):
            if sa.t in times:
                d = State.from_arrays(sys.grid, sa.u.values - sb.u.values, sa.v.values - sb.v.values)
                r.append(norm(d, "Eminus1", ref) / d0)
        K, logM = np.polyfit(times, np.log(r), 1)
        fits.append((np.exp(logM), K))
    Ms, Ks = np.array(fits).T
    # one envelope M e^{Kt} from half the batch covers the other half
    Me, Ke = Ms[:4].max(), Ks[:4].max()
    assert np.all(Ms[4:] * np.exp(Ks[4:] * times[:, None]) <= 1.5 * Me * np.exp(Ke * times[:, None]))


# --------------------------------------------------------- trajectory gaps

def test_identical_operators_have_zero_gap():
    sys = unit_system(128, f=CUBIC, g=1.0)
    cs = solve_cell(two_phase(), 128)
    xi = smooth_initial_data(sys.op, sys.g, np.random.default_rng(0))
    gs = trajectory_gap(sys, sys, xi, 1.0, "corrected", 0.5, corrector=Corrector(cs, 1.0))
    assert np.all(gs.gap_Eminus1 <= 10 * sys.tol) and np.all(gs.gap_dt <= 10 * sys.tol)


def test_non_smooth_data_warns():
    sys = unit_system(32)
    with pytest.warns(UserWarning):
        trajectory_gap(sys, sys, sine_state(sys.grid), 0.25)


def test_raw_gap_scales_with_resolvent_gap():
    rep = trajectory_rate_study(two_phase(), "dirichlet", [1 / 8, 1 / 16, 1 / 32], 512, 0.5, CUBIC,
                                [3], T=1.0, times=(1.0,))
    s, _, r2 = rep.fits["Eminus1@1"]
    assert abs(s - 1) <= 0.25 and r2 >= 0.9
    assert rep.fits["dt@1"][0] >= 0.5


def test_force_fields():
    g = make_grid(1, 1.0, 64, "periodic")
    assert np.allclose(force_field(g, "constant", 2.0), 2.0)
    assert np.allclose(force_field(g, "constant+mode", 1.0), 1 + force_field(g, "mode", 1.0))
    assert np.all(force_field(g, "zero") == 0)
