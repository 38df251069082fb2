"""Shared test oracles."""
import numpy as np


def numeric_grad(f, array: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``array`` (mutated in place)."""
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        plus = f()
        flat[i] = old - eps
        minus = f()
        flat[i] = old
        out[i] = (plus - minus) / (2 * eps)
    return grad


def directional_check(f, params: dict, grads: dict, rng: np.random.Generator, n_dirs: int = 2,
                      n_coords: int = 2, eps: float = 1e-5) -> dict:
    """Worst relative error per parameter between analytic and central-difference derivatives.

    Each parameter is probed along ``n_dirs`` random directions and along the unit
    vectors of its ``n_coords`` largest-magnitude gradient entries.
    """
    worst = {}
    for name, array in params.items():
        g = grads[name]
        directions = [rng.standard_normal(array.shape) for _ in range(n_dirs)]
        for idx in np.argsort(-np.abs(g).reshape(-1))[:n_coords]:
            e = np.zeros(array.size)
            e[idx] = 1.0
            directions.append(e.reshape(array.shape))
        err = 0.0
        for v in directions:
            original = array.copy()
            array += eps * v
            plus = f()
            array[...] = original - eps * v
            minus = f()
            array[...] = original
            fd = (plus - minus) / (2 * eps)
            an = float(np.sum(g * v))
            err = max(err, abs(an - fd) / max(abs(an) + abs(fd), 1e-7))
        worst[name] = err
    return worst


def model_gradient_errors(config, seed: int = 0, num_labels=(3, 4, 2), teacher_prob: float = 0.5) -> dict:
    """Worst directional finite-difference error per parameter of the summed slot loss.

    Runs in float64 on a random 2-utterance batch of different lengths (T <= 12),
    in training mode with dropout masks and sampling coins replayed identically
    on every evaluation.
    """
    from slu_intent.data import pad_batch
    from slu_intent.model import SLUNetwork
    from slu_intent.nn import compute_gradients, default_dtype

    with default_dtype(np.float64):
        net = SLUNetwork(config, num_labels, seed=seed, dtype=np.float64)
        rng = np.random.default_rng(seed)
        feats = [rng.normal(size=(t, 40)) for t in (12, int(rng.integers(5, 12)))]
        targets = [[int(rng.integers(n)) for n in num_labels] for _ in range(2)]
        batch = pad_batch(feats, targets, dtype=np.float64)

        def loss():
            return net.loss(batch, training=True, rng=np.random.default_rng(seed + 1), teacher_prob=teacher_prob)

        grads = compute_gradients(loss(), net.params)
        arrays = {name: p.data for name, p in net.params.items()}
        return directional_check(lambda: float(loss().data), arrays, grads, np.random.default_rng(seed + 2))


def random_posteriors(rng: np.random.Generator, sizes=(6, 14, 4), conditional: bool = True,
                      order=("action", "object", "location"), scale: float = 3.0):
    """Random log-distributions for each chain step, shaped as a SlotPosteriors expects."""
    from slu_intent.data import SLOTS
    from slu_intent.model import SlotPosteriors
    from slu_intent.nn import log_softmax_array

    ordered = [sizes[SLOTS.index(s)] for s in order]
    tables = []
    for p, n in enumerate(ordered):
        shape = (ordered[:p] if conditional else []) + [n]
        tables.append(log_softmax_array(scale * rng.standard_normal(shape), axis=-1))
    return SlotPosteriors(order, tables, conditional)
