"""Central finite-difference gradient check shared by unit and acceptance tests."""

import numpy as np

from moe_superlab.models import route_batch
from moe_superlab.training import gradients, total_loss


def _pattern(model, X):
    """Top-k selection and ReLU sign pattern; FD is only valid while both stay fixed."""
    routing = route_batch(model, X)
    pre = np.einsum("bn,emn->bem", X, model.W)
    pre = np.einsum("bem,emn->ben", pre, model.W) + model.b[None]
    return routing.selected.copy(), pre > 0


def max_relative_error(model, X, importance, lb_coeff=0.0, h=1e-5):
    """Worst relative error over all parameters not on a ReLU or top-k boundary."""
    grads = gradients(model, X, importance, lb_coeff)
    sel0, act0 = _pattern(model, X)
    worst, checked = 0.0, 0
    for param, g in zip((model.W, model.b, model.router), grads.arrays()):
        if model.E == 1 and param is model.router:
            continue
        for idx in np.ndindex(param.shape):
            old = param[idx]
            param[idx] = old + h
            plus, sel_p, act_p = total_loss(model, X, importance, lb_coeff), *_pattern(model, X)
            param[idx] = old - h
            minus, sel_m, act_m = total_loss(model, X, importance, lb_coeff), *_pattern(model, X)
            param[idx] = old
            crossed = not (np.array_equal(sel_p, sel0) and np.array_equal(sel_m, sel0)
                           and np.array_equal(act_p, act0) and np.array_equal(act_m, act0))
            if crossed:
                continue
            fd = (plus - minus) / (2 * h)
            err = abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-8)
            worst = max(worst, err)
            checked += 1
    return worst, checked
