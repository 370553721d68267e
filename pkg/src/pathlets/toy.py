"""Nine-segment toy instance with six trajectories.

Segments ``p1``..``p9`` sit on a 3x4 grid of intersections ``n<row><col>``.
Merging ``p5+p8`` and ``p1+p3+p4`` leaves the six-pathlet dictionary used as
a golden reference throughout the tests.
"""
from __future__ import annotations

from .graph import RoadNetwork, parse_road_network, trajectories_from_text

NETWORK = """\
# edge_id,node_u,node_v
p1,n10,n20
p2,n10,n11
p3,n00,n10
p4,n00,n01
p5,n03,n13
p6,n01,n02
p7,n11,n12
p8,n02,n03
p9,n02,n12
"""

TRAJECTORIES = """\
t1:p5,p8,p9,p7
t2:p2,p3,p4
t3:p3,p2
t4:p4,p6,p8,p5
t5:p4,p3,p1
t6:p7,p9,p8
"""

# (current pathlet, neighbour to merge with); keep everything else
FORCED_SCRIPT = """\
p5,p8
p3,p1
p1+p3,p4
"""


def network() -> RoadNetwork:
    return parse_road_network(NETWORK)


def trajectories(net: RoadNetwork | None = None):
    return trajectories_from_text(TRAJECTORIES, net if net is not None else network())
