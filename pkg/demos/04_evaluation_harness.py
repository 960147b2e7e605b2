"""Run one gold-standard refinement scenario and a small latency
benchmark with the evaluation harness.

Run with: python demos/04_evaluation_harness.py
"""

from radsearch.engine import SearchEngine
from radsearch.evaluation import (benchmark_queries, generate_benchmark_corpus,
                                  generate_corpus, latency_benchmark,
                                  run_scenario)

# The generator builds a deterministic corpus with five scenarios whose
# true positives are known by construction, plus engineered confounders
# (negation boilerplate, non-adjacent term pairs, recommendation context).
docs, scenarios = generate_corpus(seed=7)
engine = SearchEngine.with_default_schema()
for doc in docs:
    engine.upsert(doc)
engine.commit()

scenario = scenarios[0]
print(f"scenario {scenario.name}: {len(scenario.positive_doc_ids)} positives, "
      f"{len(scenario.universe_doc_ids)} docs in universe")
print(f"{'ops':>4} {'sens':>6} {'spec':>6} {'prec':>6}  query")
for p in run_scenario(scenario, engine):
    print(f"{p.operator_count:>4} {p.sensitivity:6.3f} {p.specificity:6.3f} "
          f"{p.precision:6.3f}  {p.query}")

# Latency benchmark: Zipf-distributed vocabulary, queries drawn so result
# counts span orders of magnitude, then an OLS of latency on result count.
print("\nindexing a 2000-document benchmark corpus ...")
bench = SearchEngine.with_default_schema()
for doc in generate_benchmark_corpus(2000, seed=11):
    bench.upsert(doc)
bench.commit()
report = latency_benchmark(bench, benchmark_queries(100, seed=13))
print(f"slope {report.slope:.4f} ms/result (p={report.p_value:.2g}), "
      f"mean {report.mean_ms:.1f} ms, median {report.p50_ms:.1f} ms")
