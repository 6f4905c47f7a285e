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
# # Formulas and Kripke structures
#
# Worlds are rows of a boolean table; each agent's indistinguishability
# relation is a vector of class ids.  Knowledge is evaluated by asking whether
# a formula holds on every member of a class.

# %%
from dcmc.formula import MacroContext, evaluate, parse_formula, to_text, valid
from dcmc.kripke import build_structure, classes_of

# %%
M = build_structure(
    ["a", "b"],
    ["a.p", "b.q"],
    [[0, 0], [0, 1], [1, 0], [1, 1]],
    {"a": ["a.p"], "b": ["b.q"]},
)
classes_of(M, "a"), classes_of(M, "b")

# %% [markdown]
# `a` sees only `a.p`, so it knows `a.p` whenever it is true but never learns `b.q`.

# %%
for text in ["K[a] a.p", "K[a] b.q", "K[a] (b.q | !b.q)", "K[b] !K[a] b.q"]:
    print(f"{text:22} {evaluate(M, parse_formula(text)).astype(int)}")

# %% [markdown]
# Macros expand to plain propositional formulas at parse time.  The slot
# request of an agent is stored as little-endian bits.

# %%
ctx = MacroContext(3)
f = parse_formula("conflict(2)", ctx)
print(len(to_text(f)), "characters once expanded")
print(to_text(parse_formula("slot_request == 3", ctx, owner="2")))

# %%
valid(M, parse_formula("K[a] a.p => a.p"))
