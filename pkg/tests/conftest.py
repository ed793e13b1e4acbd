import numpy as np
import torch


def finite_diff_grad(fn, params, eps=1e-6):
    """Central-difference gradients of scalar ``fn()`` wrt leaf tensors."""
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat = p.reshape(-1)
            gf = g.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                hi = float(fn())
                flat[i] = orig - eps
                lo = float(fn())
                flat[i] = orig
                gf[i] = (hi - lo) / (2.0 * eps)
            grads.append(g)
    return grads


def max_relative_error(analytic, numeric):
    """Guarded elementwise relative error, maxed over all tensors."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(1.0, np.maximum(np.abs(a.numpy()), np.abs(n.numpy())))
        worst = max(worst, float((np.abs(a.numpy() - n.numpy()) / denom).max()))
    return worst
