"""
Functional kernels for a processing-in-memory crossbar
======================================================

Bit-serial arithmetic, thermometer ADC readout, a self-correcting random bit
source, and the negacyclic NTT used by lattice cryptography.
"""

import numpy as np

from sustaindc import pimfunc

a, b = pimfunc.Word(173, 8), pimfunc.Word(94, 8)
print("add:", pimfunc.associative_add(a, b).value, " mul:", pimfunc.mul(a, b).value)
print("AND/XOR:", pimfunc.logic_op("AND", a, b).value, pimfunc.logic_op("XOR", a, b).value)

# Thermometer codes; disabling comparators trades resolution for power
for v in (0.3, 0.9, 1.7):
    print(f"{v} V ->", pimfunc.adc_quantize(v), pimfunc.adc_quantize(v, pimfunc.AdcConfig().disable(2, 4)))

# A biased source pulled back towards 1/2
bits, state = pimfunc.trg_run(pimfunc.TrgState(bias=0.3), 400, np.random.default_rng(7))
print("ones fraction, first/last 10k bits:", bits[:10_000].mean(), bits[-10_000:].mean())

# NTT-based negacyclic polynomial product, checked against schoolbook
n = 256
params = pimfunc.NttParams(n)
rng = np.random.default_rng(0)
x, y = rng.integers(0, params.q, n), rng.integers(0, params.q, n)
fast = pimfunc.intt([u * v % params.q for u, v in zip(pimfunc.ntt(x, params), pimfunc.ntt(y, params))], params)
slow = np.zeros(n, dtype=object)
for i in range(n):
    for j in range(n):
        sign = 1 if i + j < n else -1
        slow[(i + j) % n] += sign * int(x[i]) * int(y[j])
print("negacyclic product matches:", fast == [int(v) % params.q for v in slow])
