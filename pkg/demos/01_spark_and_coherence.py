# How many simultaneous faults can ten sensors on a 30-node network tell apart?
#
# Run from the repository root:  python3 demos/01_spark_and_coherence.py
import numpy as np

from faultscope import Gammoid, make_twin, shortest_path_coherence, spark_exact
from faultscope.cluster import cluster_inputs
from faultscope.lintransfer import coherence_at, coherence_spark_bound, default_s_samples

exp = make_twin(30, 10, 1, seed=3)
print("sensors:", exp.system.sensors)

# Exact spark: the size of the smallest set of input nodes that cannot be
# linked into the sensors by node-disjoint paths.
gam = Gammoid(exp.graph, range(30), exp.system.sensors)
spark = spark_exact(gam, max_size=3)
print(f"spark >= {spark.value}" if spark.truncated else f"spark = {spark.value}")
print("so every single fault is uniquely determined:", spark.value > 2)

# The coherence bound is cheap but loose. Pairs of nodes that reach the
# sensors only through the same bottleneck have coherence 1.
coh = shortest_path_coherence(gam)
print("mutual shortest-path coherence:", round(coh.mutual, 3))
print("coherence lower bound on the spark:", coherence_spark_bound(coh, 30))

for s in default_s_samples(exp.system.A):
    c = coherence_at(exp.system.A, s, range(30), exp.system.sensors)
    print(f"  gramian coherence at s = {s:.3g}: {c.mutual:.4f}")

# Nodes that look alike from the sensors end up in one cluster.
clusters = cluster_inputs(coh, linkage="average", n_clusters=5)
print("five input clusters:")
for k, members in enumerate(clusters.clusters()):
    print(f"  C{k}: {list(members)}")

near_one = np.argwhere(np.triu(coh.values, 1) > 1 - 1e-9)
print("pairs with shortest-path coherence 1:",
      [(coh.node_ids[i], coh.node_ids[j]) for i, j in near_one][:10])
