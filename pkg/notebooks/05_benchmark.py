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
# # Concrete vs abstract cost
#
# Each concrete DC round over a ring of `n` multiplies the worlds by `2^n`;
# the abstract round adds none.  Checking anonymity after a few rounds shows
# the gap.  Absolute times depend on the machine.

# %%
from dcmc.cli import bench_rows

rows = bench_rows(3, 4)
for row in rows:
    a, c = row["abstract"], row["concrete"]
    print(f"r={row['rounds']}: concrete {c['worlds']:>8} worlds {c['seconds']:.3f}s, "
          f"abstract {a['worlds']} worlds {a['seconds']:.3f}s, speedup {row['speedup']:.0f}x, "
          f"same verdict {a['spec4'] == c['spec4']}")

# %% [markdown]
# Growth law check.

# %%
all(row["concrete"]["worlds"] == 512 * 8 ** row["rounds"] for row in rows)
