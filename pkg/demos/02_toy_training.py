"""
Fitting a small uncertain knowledge graph
=========================================

The confidences of a synthetic graph are produced by a hidden box model,
so a learner with enough capacity should drive the training error close
to zero.  Run from anywhere: ``python demos/02_toy_training.py``.
"""

import time

import numpy as np

from boxukg.evaluation import confidence_metrics, predict, rank_queries, rank_tails, volume_report
from boxukg.synthetic import planted_ukg
from boxukg.training import TrainConfig, fit

# 50 entities, 2 relations; the 550 highest-scoring pairs become facts
toy = planted_ukg(n_triples=550, split=(500 / 550, 0.0, 50 / 550), seed=0)
ds = toy.dataset
print(f"{ds.n_entities} entities, {ds.n_relations} relations, "
      f"{len(ds.train)} train / {len(ds.test)} test facts")
print("confidence quartiles:", np.round(np.quantile(ds.train.s, [0.25, 0.5, 0.75]), 3))

# the learner has more dimensions than the hidden 2-d model, and a softer beta
config = TrainConfig(d=16, beta=0.1, lr=0.01, batch_size=100, alpha=0.1, n_neg=5,
                     w_tr=0.0, w_c=0.0, l2_box=1.0, l2_other=0.001,
                     max_epochs=300, patience=300, seed=0)
start = time.perf_counter()
result = fit(ds, config)
print(f"\ntrained {result.epochs_run} epochs in {time.perf_counter() - start:.0f}s, "
      f"best epoch {result.best_epoch}")
for row in result.log[:: max(1, len(result.log) // 6)]:
    print(f"  epoch {row['epoch']:4d}  J1={row['J1']:.4f}  val mse={row['val_metric']:.5f}")

store = result.store
mse, mae = confidence_metrics(ds.train, store)
print(f"\ntrain MSE {mse:.5f}  MAE {mae:.4f}")
mse, mae = confidence_metrics(ds.test, store)
# 500 facts against 50 * 16 * 2 box parameters plus transforms: memorised, not generalised
print(f"test  MSE {mse:.5f}  MAE {mae:.4f}  (unseen facts)")

# a few individual predictions
phi, _ = predict(store, ds.train.h[:5], ds.train.r[:5], ds.train.t[:5])
for (h, r, t, s), p in zip(list(ds.train)[:5], phi):
    print(f"  ({ds.entity_names[h]}, {ds.relation_names[r]}, {ds.entity_names[t]})  s={s:.3f}  phi={p:.3f}")

# ranking: for each (head, relation) of the test split, order every entity as a tail
res = rank_queries(ds.test, store, relevance=ds.all_triples())
print(f"\nranking over {len(res.queries)} queries: "
      f"linear nDCG {res.mean_linear:.3f}, exponential nDCG {res.mean_exponential:.3f}")
order, scores = rank_tails(store, int(ds.test.h[0]), int(ds.test.r[0]))
print("top tails for the first test query:", [ds.entity_names[i] for i in order[:5]])

# which tail boxes cover the most other tail boxes after the relation transform?
# with 16 soft dimensions the trained boxes barely overlap, so nothing covers anything yet
report = volume_report(store, 0, top_k=3, threshold=0.5)
print("\nlargest tail boxes under r0:")
for row in report.top:
    print(f"  {row.name}: covers {row.coverage}, volume {row.volume:.3g}")

# plant one "general concept": a box wrapped around every other box with room to spare
cen, log_off = store.arrays["ent_cen"], store.arrays["ent_log_off"]
lo, hi = (cen - np.exp(log_off)).min(axis=0), (cen + np.exp(log_off)).max(axis=0)
cen[7], log_off[7] = (lo + hi) / 2, np.log((hi - lo) / 2 + 10.0)
report = volume_report(store, 0, top_k=3, threshold=0.9)
print("after planting a box around everything as e7:")
for row in report.top:
    print(f"  {row.name}: covers {row.coverage}, volume {row.volume:.3g}")
