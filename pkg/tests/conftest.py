import numpy as np
import pytest

from dersim import kernels
from dersim.dynamics import RodState
from dersim.energetics import MaterialFrame, RodParams
from dersim.geometry import Centerline, init_reference_frames


def random_rod(rng, n_nodes=10, bend=0.4, closed=False):
    """A smooth random space curve with roughly unit-length edges."""
    steps = np.zeros((n_nodes - (0 if closed else 1), 3))
    d = np.array([1.0, 0.0, 0.0])
    for i in range(len(steps)):
        d = d + bend * rng.normal(size=3)
        d /= np.linalg.norm(d)
        steps[i] = d * rng.uniform(0.8, 1.2)
    nodes = np.vstack([np.zeros(3), np.cumsum(steps, axis=0)])
    if closed:
        nodes = nodes[:-1]
    return nodes


def random_state(rng, n_nodes=10, bend=0.4, twist=1.0):
    nodes = random_rod(rng, n_nodes, bend)
    s = RodState.from_nodes(nodes)
    n_edges = n_nodes - 1
    s.material = MaterialFrame(twist * rng.normal(size=n_edges))
    return s


def ring_nodes(n, radius=1.0):
    a = 2 * np.pi * np.arange(n) / n
    return radius * np.column_stack([np.cos(a), np.sin(a), np.zeros(n)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["python", "cython"])
def backend(request):
    """Run a test under each available kernel backend."""
    if request.param == "cython" and kernels.compiled_backend is None:
        pytest.skip("compiled kernels not built")
    prev = kernels.NAME
    kernels.use(request.param)
    yield request.param
    kernels.use(prev)


def frames_of(nodes, closed=False, rest=None):
    c = Centerline(nodes, rest if rest is not None else
                   np.linalg.norm(np.diff(np.vstack([nodes, nodes[:1]]) if closed else nodes, axis=0), axis=1),
                   closed)
    return c, init_reference_frames(c, np.array([0.0, 0.0, 1.0]) if not closed else np.array([0.0, 0.0, 1.0]))


def params_for(c, alpha=1.0, beta=1.0, density=1.0, damping=0.0):
    return RodParams.uniform(alpha, beta, c.rest_lengths, density, damping, closed=c.closed)
