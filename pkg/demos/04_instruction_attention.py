"""
Instruction logits and distance
===============================

With rotary positions everywhere, the score between a visual query and an
instruction key depends on how far apart they sit in the stream, so a long
run of frames changes what the newest frame sees of the instruction. The
decoupled mask scores that pair without positions. Here the instruction and
the newest frame are fixed; only the number of frames in between varies.
"""
import numpy as np

from tokendrive.lm import INSTRUCTION, build_stream, ddia_weights
from tokendrive.numerics import Tensor

rng = np.random.default_rng(0)
d, n_instr, n_last = 8, 4, 3
instr_k = rng.standard_normal((n_instr, d))
last_q = rng.standard_normal((n_last, d))

for mode in ("ddia", "causal"):
    rows = []
    for n_between in (1, 4, 16, 64):
        sizes = [1] * n_between + [n_last]
        stream = build_stream(Tensor(np.zeros((n_instr, d))), [Tensor(np.zeros((s, d))) for s in sizes])
        q = rng.standard_normal((stream.length, d))
        k = rng.standard_normal((stream.length, d))
        q[-n_last:] = last_q
        k[:n_instr] = instr_k
        logits, _, _ = ddia_weights(q, k, stream, base=100.0, mode=mode)
        instr = stream.segment == INSTRUCTION
        rows.append(logits[-n_last:][:, instr])
    spread = np.max([np.abs(r - rows[0]).max() for r in rows])
    print("%-6s newest-frame -> instruction logits, max change across gaps: %.3e" % (mode, spread))
