import numpy as np
import pytest

from nextevent import _backend, lstm, nncore


def _available_backends():
    names = ["python"]
    try:
        _backend.get("cython")
        names.append("cython")
    except ImportError:
        pass
    return names


BACKENDS = _available_backends()


@pytest.fixture(params=BACKENDS)
def kernels(request):
    return _backend.get(request.param)


def random_instance(seed=1, m=8, T=5, B=2, v=6, peepholes=False, scale=0.5, dropout=True):
    """Small network with non-trivial states, masks and targets."""
    rng = nncore.make_rng(seed)
    params = lstm.init_params(rng, v, v, m, peepholes=peepholes, init_scale=scale)
    ids = rng.integers(0, v, (T, B))
    targets = rng.integers(0, v, (T, B))
    states = [lstm.LstmState(rng.normal(size=(B, m)) * 0.3, rng.normal(size=(B, m)) * 0.3) for _ in params.layers]
    masks = [nncore.dropout_mask(rng, (T, B, m), 0.2) for _ in range(len(params.layers) + 1)] if dropout else None
    return params, states, ids, targets, masks


def fd_gradient_max_rel_error(params, states, ids, targets, masks, kernels, h=1e-5, floor=1e-6, rmasks=None):
    """Max over all parameter entries of |analytic - central FD| / max(|a|, |fd|, floor)."""
    _, _, acts = lstm.forward_unrolled(params, states, ids, masks, kernels=kernels, recurrent_masks=rmasks)
    _, grads = lstm.backward_unrolled(params, acts, targets, kernels=kernels)

    def loss():
        _, _, a = lstm.forward_unrolled(params, states, ids, masks, kernels=kernels, recurrent_masks=rmasks)
        return lstm.backward_unrolled(params, a, targets, kernels=kernels)[0]

    worst = {}
    for (name, arr), (_, g) in zip(params.named_arrays(), grads.named_arrays()):
        err = 0.0
        for ix in np.ndindex(arr.shape):
            orig = arr[ix]
            arr[ix] = orig + h
            lp = loss()
            arr[ix] = orig - h
            lm = loss()
            arr[ix] = orig
            fd = (lp - lm) / (2 * h)
            err = max(err, abs(fd - g[ix]) / max(abs(fd), abs(g[ix]), floor))
        worst[name] = err
    return worst
