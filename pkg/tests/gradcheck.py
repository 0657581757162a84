"""Central finite-difference oracle for the autograd engine."""
import numpy as np


def numeric_grad(fn, t, idx, eps=1e-4):
    orig = t.data[idx]
    t.data[idx] = orig + eps
    up = float(fn().data)
    t.data[idx] = orig - eps
    down = float(fn().data)
    t.data[idx] = orig
    return (up - down) / (2 * eps)


def relative_errors(fn, tensors, eps=1e-4, max_entries=None, seed=0, floor=1e-7):
    """Norm-relative error between backprop and central differences, one per tensor.

    ``fn`` must rebuild the graph from ``tensors`` on every call and return a scalar.
    With ``max_entries`` only that many randomly chosen entries per tensor are probed.
    ``floor`` keeps structurally zero gradients (e.g. a key bias under softmax)
    from being judged on rounding noise alone.
    """
    rng = np.random.default_rng(seed)
    for t in tensors:
        t.grad = None
    fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    errors = []
    for t, a in zip(tensors, analytic):
        flat = np.arange(t.data.size)
        if max_entries is not None and flat.size > max_entries:
            flat = rng.choice(flat, max_entries, replace=False)
        a_sel, n_sel = [], []
        for f in flat:
            idx = np.unravel_index(f, t.data.shape)
            a_sel.append(a[idx])
            n_sel.append(numeric_grad(fn, t, idx, eps))
        a_sel, n_sel = np.array(a_sel), np.array(n_sel)
        scale = max(np.linalg.norm(a_sel), np.linalg.norm(n_sel), floor)
        errors.append(float(np.linalg.norm(a_sel - n_sel) / scale))
    return errors


def max_relative_error(fn, tensors, **kw):
    return max(relative_errors(fn, tensors, **kw))


def pooled_relative_error(fn, tensors, eps=1e-4, max_entries=None, seed=0):
    """One norm-relative error over the sampled entries of all tensors together.

    Suited to whole-model checks, where a few parameters carry gradients far below
    the finite-difference noise and a per-tensor ratio would only measure that noise.
    """
    rng = np.random.default_rng(seed)
    for t in tensors:
        t.grad = None
    fn().backward()
    a_sel, n_sel = [], []
    for t in tensors:
        g = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = np.arange(t.data.size)
        if max_entries is not None and flat.size > max_entries:
            flat = rng.choice(flat, max_entries, replace=False)
        for f in flat:
            idx = np.unravel_index(f, t.data.shape)
            a_sel.append(g[idx])
            n_sel.append(numeric_grad(fn, t, idx, eps))
    a_sel, n_sel = np.array(a_sel), np.array(n_sel)
    return float(np.linalg.norm(a_sel - n_sel) / max(np.linalg.norm(a_sel), np.linalg.norm(n_sel)))
