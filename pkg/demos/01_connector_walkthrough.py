"""
One frame through the connector
===============================

A frozen encoder turns a driving scene into 16 tokens of width 32. The
sparsifier decides which tokens survive, the aggregator turns the survivors
into LM-width tokens, and the reconstructor tries to recover the pruned ones.
"""
import numpy as np

from tokendrive.harness.config import RunConfig
from tokendrive.harness.data import make_encoder
from tokendrive.harness.model import DrivingModel
from tokendrive.numerics import RngStream
from tokendrive.mefa import MemoryBank
from tokendrive.sim import WorldState, generate_scenario, start_state, step

cfg = RunConfig()
scenario = generate_scenario(3)
world, ego = WorldState.initial(scenario), start_state(scenario)
F = make_encoder(cfg)(world, ego)
print("frame features", F.shape, "mean |F| %.4f" % np.abs(F).mean())

model = DrivingModel(cfg)

# eval mode: keep a token when its keep probability wins
out = model.frame_tokens(F, None, train=False, losses=True)
print("eval mask   ", out.mask.hard.astype(int), "kept ratio %.3f" % out.mask.kept_ratio)

# train mode samples a straight-through Gumbel mask instead
out = model.frame_tokens(F, None, train=True, rng=RngStream(0))
print("train mask  ", out.mask.hard.astype(int), "kept ratio %.3f" % out.mask.kept_ratio)
print("visual tokens for the LM", out.tokens.shape)
print("L_prun %.5f   L_rec %.5f" % (out.loss.l_prun.item(), out.loss.l_rec.item()))

# the temporal path: one step later the bank average is just the first frame
world, ego, _ = step(world, ego, (0.0, 1.0), 0.1)
F2 = make_encoder(cfg)(world, ego)
bank = MemoryBank(cfg.capacity).push(F)
out2 = model.frame_tokens(F2, bank.average(), train=False)
print("second frame: %d tokens, |F2 - F| = %.2e" % (out2.tokens.rows, np.abs(F2 - F).max()))
