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
# # Programs, enabledness and steps
#
# A program is a list of joint actions.  A joint action is only enabled when
# every value it reads is observable by the acting agent and nothing it writes
# is already observable.

# %%
from dcmc.kripke import build_structure
from dcmc.lang import apply_ov, enabledness_violation, parse_program, perfect_recall_violation, run, trace

# %%
P = parse_program("step { j: broadcast(y) }\nstep { i: x := j.y }")
ov = {"i": frozenset(), "j": frozenset({"j.y"})}
broadcast, copy = P.steps
print("copy first:", enabledness_violation(copy, ov))
print("after broadcast:", enabledness_violation(copy, apply_ov(ov, broadcast)))

# %% [markdown]
# Running the program refines `i`'s view: it starts unable to tell the two
# values of `j.y` apart and ends knowing it.

# %%
M = build_structure(["i", "j"], ["j.y"], [[0], [1]], {"j": ["j.y"]})
for pos, S, _ in trace(M, P):
    print(pos, S.num_worlds, "worlds;", S.num_classes("i"), "classes for i")

# %% [markdown]
# Random choices multiply the worlds; each new world extends an old one, so
# nobody ever forgets a distinction.

# %%
R = parse_program("step { i: rand(k) ; j: rand(k) }\nstep { i: k -> j.ki }")
prev = None
for pos, S, _ in trace(M, R):
    if prev is not None:
        print(pos, S.num_worlds, "worlds, recall violation:", perfect_recall_violation(prev, S))
    prev = S

# %%
result = run(M, parse_program('step { j: broadcast(y) }\ncheckpoint "end" assert K[i] j.y | K[i] !j.y'))
[(r.name, r.holds) for r in result.results]
