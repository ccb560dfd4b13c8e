# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

"""
Numpy building blocks with hand written backward passes.

Every *_forward function returns (output, cache) and the matching *_backward function takes that cache with the
upstream gradient, accumulates parameter gradients into the grads dict and returns the gradient of the input. A
grads value of None skips the parameter gradients entirely, a missing key skips that parameter only.
"""

import numpy as np


def accumulate(grads, name, value):
    if grads is not None and name in grads:
        grads[name] += value


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    exp_neg = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + exp_neg), exp_neg / (1.0 + exp_neg))


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    shifted = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return shifted / np.sum(shifted, axis=axis, keepdims=True)


def softmax_backward(prob, dprob, axis=-1):
    return prob * (dprob - np.sum(prob * dprob, axis=axis, keepdims=True))


def init_linear(rng, prefix, in_dim, out_dim, scale=None):
    scale = 1.0 / np.sqrt(in_dim) if scale is None else scale
    return {
        "%s.weight" % prefix: rng.normal(0.0, scale, size=(out_dim, in_dim)),
        "%s.bias" % prefix: np.zeros(out_dim),
    }


def init_mlp(rng, prefix, in_dim, hidden_dim, out_dim):
    params = {}
    params.update(init_linear(rng, "%s.hidden" % prefix, in_dim, hidden_dim))
    params.update(init_linear(rng, "%s.out" % prefix, hidden_dim, out_dim))
    return params


def linear_forward(params, prefix, x):
    y = params["%s.weight" % prefix] @ x + params["%s.bias" % prefix]
    return y, x


def linear_backward(params, prefix, cache, dy, grads):
    x = cache
    accumulate(grads, "%s.weight" % prefix, np.outer(dy, x))
    accumulate(grads, "%s.bias" % prefix, dy)
    return params["%s.weight" % prefix].T @ dy


def mlp_forward(params, prefix, x):
    """
    One hidden layer perceptron: y = W2 tanh(W1 x + b1) + b2.
    """
    pre, x_cache = linear_forward(params, "%s.hidden" % prefix, x)
    hidden = np.tanh(pre)
    y, h_cache = linear_forward(params, "%s.out" % prefix, hidden)
    return y, (x_cache, hidden, h_cache)


def mlp_backward(params, prefix, cache, dy, grads):
    x_cache, hidden, h_cache = cache
    dhidden = linear_backward(params, "%s.out" % prefix, h_cache, dy, grads)
    dpre = dhidden * (1.0 - hidden**2)
    return linear_backward(params, "%s.hidden" % prefix, x_cache, dpre, grads)
