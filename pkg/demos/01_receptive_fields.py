"""
Where does a network stop looking at new pixels?
================================================

A small CIFAR-sized net: three groups of four 3x3 convs with 2x2 max pools
in between.  We print each conv's receptive field and see which layers
fall on the far side of the boundary for z = 32 (the input side).
"""

from mbs.ir import GraphBuilder
from mbs.rf import analyze, profile_text

b = GraphBuilder("three-stage", 32)
for i, width in enumerate((16, 32, 64)):
    if i:
        b.pool(2, 2)
    for _ in range(4):
        b.conv(width, 3)
graph = b.build()

# macroblocks were inferred from output sizes
print("macroblocks:", [(m.id, m.out_spatial, m.base_width) for m in graph.macroblocks])

profile = analyze(graph, z=32)
print(profile_text(profile))

# the boundary is the smallest receptive field strictly above z; the
# layer that reaches it still counts as base
enh = sorted(profile.enhancement_ids())
print("first enhancement layer:", enh[0], "in macroblock", profile.entry(enh[0]).macroblock_id)

# a larger z pushes the boundary outward and shrinks the enhancement set
for z in (16, 32, 48, 64):
    p = analyze(graph, z=z)
    print(f"z={z:>3}  boundary={p.boundary}  enhancement layers={len(p.enhancement_ids())}")
