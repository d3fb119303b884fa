"""Tour of the autodiff engine: build a small expression, differentiate it,
and verify every analytic gradient against central finite differences.

Run:  python3 demos/01_autodiff_gradcheck.py
"""

import numpy as np

from meshmotion import tensor as T
from meshmotion.tensor import Tensor, gradcheck
from meshmotion.verification import op_gradcheck_suite, toy_objective_gradcheck

rng = np.random.default_rng(0)

# A tensor tracks gradients once requires_grad is set; ops record a tape.
x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
b = Tensor(np.zeros(3), requires_grad=True)

out = T.tsum(T.tanh(T.pointwise_linear(x, w, b)))
out.backward()
print("dL/db =", b.grad)

# The same harness the test suite uses: perturb each input component by
# +/- h and compare the analytic gradient at tolerance.
report = gradcheck(lambda x, w, b: T.tsum(T.tanh(T.pointwise_linear(x, w, b))), [x, w, b])
print(report)

# Per-op suite over every operation the model needs:
for name, rep in op_gradcheck_suite():
    print(f"{name:>18}: {rep}")

# End-to-end: the full training objective through the toy model.
print("full objective:", toy_objective_gradcheck())
