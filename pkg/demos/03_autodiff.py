"""
Gradients on the tape
=====================

Operations record themselves on a tape; one backward pass returns the
gradient of a scalar with respect to every input. Central differences
confirm the result.
"""

import numpy as np

from greeneyes import nn
from greeneyes import tensor as T
from greeneyes.nn import ModelConfig, init_params
from greeneyes.tensor import Tape, Tensor, backward, grad_check

with Tape() as tape:
    x = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
    y = T.reduce("sum", T.tanh(x) * x)
g = backward(tape, y, wrt=[x])[x.node_id]
print("analytic", g.data)
print("expected", np.tanh(x.data) + x.data / np.cosh(x.data) ** 2)

rng = np.random.default_rng(0)
conv = nn.CausalConvParams(Tensor(rng.uniform(-1, 1, (2, 2, 3))), Tensor(np.zeros(2)), dilation=4)
seq = Tensor(rng.uniform(-1, 1, (20, 2)))
print("conv grad_check", grad_check(lambda s: T.reduce("sum", T.tanh(nn.causal_conv1d(s, conv))), seq))

# the full model, with respect to its input window
model = init_params(ModelConfig(window_size=64, filters=4, block_layers=(3, 2), lstm_hidden=8, pool_factor=4))
window = Tensor(rng.uniform(-1, 1, (64, 1)))
print("receptive field", model.config.receptive_field, "parameters", model.num_parameters())
print("model grad_check", grad_check(lambda w: (model(w) - 0.7) * (model(w) - 0.7), window))
