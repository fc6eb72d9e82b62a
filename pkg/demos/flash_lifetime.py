"""
Stretching a recycled flash chip with fractional cells
======================================================

Drop the number of threshold-voltage states per cell one level at a time
instead of jumping from 2-bit to 1-bit cells, and watch what that does to
capacity and total bytes written.
"""

from sustaindc import frac, ftlsim

# Page capacity and endurance as the number of states per cell drops
print(" m  alpha  bits  page_bytes  endurance")
for m in range(8, 1, -1):
    spec = frac.FracSpec.best(m)
    print(f"{m:2d}  {spec.alpha:5d}  {spec.k:4d}  {frac.page_capacity(m, spec.alpha):10d}  {frac.endurance_multiplier(m):9.2f}")

# A small chip with pre-recycle wear, replayed to death under each policy
geometry = ftlsim.Geometry(blocks_per_chip=64, pages_per_block=16)
for policy in ftlsim.POLICIES:
    chip = ftlsim.init_chip(geometry, (2000, 4000), seed=42, policy=ftlsim.DegradePolicy(policy))
    rep = ftlsim.run_lifetime(chip)
    drops = rep.capacity_drops()
    biggest = max((a - b) / a for a, b in drops) if drops else 0.0
    print(
        f"{policy:11s} wrote {rep.total_host_bytes_written / 2**20:8.1f} MiB, "
        f"{len(drops):4d} capacity steps (largest {biggest:.0%}), died of {rep.death_cause}"
    )

# The capacity timeline is plain CSV, ready for any plotting tool
chip = ftlsim.init_chip(geometry, (2000, 4000), seed=42)
print(ftlsim.run_lifetime(chip).timeline_csv().splitlines()[:5])
