# ---
# jupyter:
#   jupytext:
#     formats: ipynb,py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Two-phase anonymous broadcast
#
# Agents first reserve slots with one DC round per slot, then transmit on the
# slot they chose as long as they do not know of a clash.  We check candidate
# local predicates against the knowledge conditions they replace.

# %%
from dcmc.formula import Evaluator, Knows, Not, expand_conflict
from dcmc.twophase import (
    SPECS,
    check_implementation,
    context,
    final_candidate,
    find_world,
    run_structure,
    spec_formulas,
)

# %% [markdown]
# Guessing `false` everywhere fails straight away: with nobody requesting a
# slot, an agent does not know of a conflict yet its predicate says it does.

# %%
rep = check_implementation(3, "initial", specs=("1",))
e = rep.failures()[0]
print(e.spec, e.agent, e.slot, "witness world", e.witness)
print({k: v for k, v in e.witness_valuation.items() if "slot_request" in k})

# %% [markdown]
# The refined candidate predicates:

# %%
c = final_candidate(3)
print("kc[1]   :", c.kc[0])
print("dlvrd   :", c.dlvrd[:120], "...")

# %%
for strength in ("strong", "weak"):
    for n in (3, 4):
        rep = check_implementation(n, "final", strength, specs=SPECS + ("3s",))
        print(strength, n, rep.verdicts())

# %% [markdown]
# Everything holds except the literal delivery equivalence `3`.  It fails only
# for agents that request no slot: there the right-hand side is vacuously
# true while the candidate sets `dlvrd` to false.  Restricted to agents that
# actually request a slot (`3s`) it holds.

# %%
import numpy as np

M = run_structure(3)
ctx = context(3)
ev = Evaluator(M)
bad = ~ev(spec_formulas(3, "3", "1"))
sr = sum(M.column(v).astype(int) << b for b, v in enumerate(ctx.slot_bits("1")))
print(bad.sum(), "failing worlds for agent 1; slot requests there:", np.unique(sr[bad]))

# %% [markdown]
# A four-agent run: requests (4,3,1,3), messages (1,0,1,0).

# %%
ctx = context(4)
M = run_structure(4)
w = find_world(M, 4, (4, 3, 1, 3), (1, 0, 1, 0))
print([M.valuation(w)[f"1.rr[{t}]"] for t in range(1, 9)])
ev = Evaluator(M)
for agent, slot in (("2", 1), ("2", 4), ("1", 4)):
    print(f"K[{agent}] !conflict({slot}):", bool(ev(Knows(agent, Not(expand_conflict(slot, ctx))))[w]))
