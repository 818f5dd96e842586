"""
Checking the hand-written network
=================================

The reward predictor is a small conv/pool/dense stack written on numpy.
Before trusting it in a training loop we compare its backpropagated
gradients with finite differences and take a few Adam steps on a toy fit.
"""

import numpy as np

from risorch.neural import adam_step, build_reward_network, gradient_check, masked_mse_loss

net = build_reward_network(400, 16, "conv", seed=0)
print("parameters:", net.n_parameters)
for kind, sl in net.parameter_slices():
    print(f"  {kind:8s} {sl.stop - sl.start:6d}")

rng = np.random.default_rng(0)
x = rng.normal(size=400)
report = gradient_check(net, x, action_index=3, target=2.0, epsilon=1e-4, max_params=300,
                        rng=np.random.default_rng(1))
print(f"max relative error over {report.indices.size} parameters: {report.max_relative_error:.2e}")

# a corrupted gradient entry is caught (same parameter sample as above)
pred = net.forward(x)
grad = net.backward(masked_mse_loss(pred, 3, 2.0)[1])
target = report.indices[np.argmax(np.abs(report.analytic))]
grad[target] *= 2
bad = gradient_check(net, x, 3, 2.0, analytic=grad, max_params=300, rng=np.random.default_rng(1))
print("corrupted entry", target, "flagged:", bad.flagged)

# fit a fixed reward per action on one input: loss falls step by step
targets = rng.uniform(0, 8, 16)
for step in range(201):
    pred = net.forward(np.tile(x, (16, 1)), training=False)
    loss, seed = masked_mse_loss(pred, np.arange(16), targets)
    adam_step(net, net.backward(seed), 1e-3)
    if step % 50 == 0:
        print(f"step {step:3d} loss {loss:.4f}")
