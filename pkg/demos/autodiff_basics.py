"""
Reverse-mode gradients on small tensors
=======================================

"""

import numpy as np

from mdkt import autodiff as ad
from mdkt.autodiff import Tensor
from mdkt.gradcheck import grad_check

# leaves that want gradients
x = Tensor([[1.0, -2.0], [0.5, 3.0]], requires_grad=True)
w = Tensor([[0.3], [-0.7]], requires_grad=True)

# forward pass builds the graph as it goes
h = ad.relu(x @ w)
loss = ad.mean(h * h)
print("loss", loss.item())

# one backward call fills .grad on every leaf that reached the loss
loss.backward()
print("dloss/dx\n", x.grad)
print("dloss/dw\n", w.grad)

# gradients accumulate, so clear them between steps
x.grad = w.grad = None

# softmax with temperature, then KL between two rows of probabilities
p = ad.softmax_rows(Tensor([[0.0, np.log(3.0)]]))
q = Tensor([[0.5, 0.5]])
print("softmax", p.data, "KL", ad.kl_divergence(p, q).item())

# pairwise squared distances are symmetric with an exact zero diagonal
pts = Tensor([[0.0, 0.0], [3.0, 4.0], [1.0, 1.0]])
print(ad.pairwise_sq_euclidean(pts).data)

# finite differences agree with the analytic gradient
start = Tensor(np.random.default_rng(0).normal(size=(3, 2)))
err = grad_check(lambda t: ad.tsum(ad.exp(ad.scale(t, 0.5)) * t), start)
print("max relative error", err)

# inside no_grad nothing is recorded
with ad.no_grad():
    y = x @ w
print("recorded a graph:", not y.is_leaf)
