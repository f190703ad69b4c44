import numpy as np
import pytest

from cavmem import control, dynamics, model, shapes


@pytest.fixture
def report(capsys):
    """Print one PASS/FAIL line straight to the terminal, then assert."""

    def _report(label, ok, detail=""):
        with capsys.disabled():
            print(f"\n[acceptance] {label}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"{label}: {detail}"

    return _report


def window_sech(width=6.0):
    return shapes.truncate(shapes.sech(), -width / 2, width / 2)


# tier, params, impulse target for the randomized drive families
RANDOM_FAMILIES = [
    (dynamics.Tier.ATOM_LOSSLESS, model.MemoryParams.for_rate(1.0), "P"),
    (dynamics.Tier.ATOM, model.MemoryParams(g_sqrtN=4.0, kappa_in=8.0, delta=0.7), "P"),
    (dynamics.Tier.FULL, model.MemoryParams(g_sqrtN=3.0, kappa_in=9.0, delta=-0.4), "P"),
    (dynamics.Tier.CAVITY, model.MemoryParams(g_sqrtN=10.0, kappa_in=1.0), "E"),
    (dynamics.Tier.CAVITY, model.MemoryParams(g_sqrtN=10.0, kappa_in=1.0, delta=0.5), "E"),
]


def random_drive(rng, t1, t2, target="P", n_knots=12, max_impulses=2, scale=1.5):
    # jittered uniform knots: clustered knots make the cubic spline overshoot wildly
    times = np.linspace(t1, t2, n_knots)
    h = times[1] - times[0]
    times[1:-1] += rng.uniform(-0.3 * h, 0.3 * h, n_knots - 2)
    omega = scale * (rng.normal(size=n_knots) + 1j * rng.normal(size=n_knots))
    k = int(rng.integers(0, max_impulses + 1))
    imps = tuple(sorted((control.Impulse(float(rng.uniform(t1, t2)), float(rng.uniform(0.1, 1.4)),
                                         float(rng.uniform(-np.pi, np.pi)), target) for _ in range(k)),
                        key=lambda i: i.time))
    return control.ControlDrive(times=times, omega=omega, theta=np.zeros(n_knots), impulses=imps,
                                t1=float(t1), t2=float(t2), interpolation="cubic")
