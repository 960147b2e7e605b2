"""Build a small index and run regular, boolean, phrase, fielded, and
wildcard searches against it.

Run with: python demos/02_index_and_boolean_queries.py
"""

from radsearch.engine import SearchEngine
from radsearch.index import ReportDocument
from radsearch.querylang import parse_query, pretty

engine = SearchEngine.with_default_schema()
reports = {
    "acc1": "IVC filter in place. No complication.",
    "acc2": "IVC filter retrieved without difficulty.",
    "acc3": "No evidence of IVC filter. Hepatic cyst noted.",
    "acc4": "Hepatic arterial infusion pump catheter intact.",
}
for doc_id, findings in reports.items():
    engine.upsert(ReportDocument(doc_id, {"Findings": findings}))
engine.commit()


def show(query):
    hits = engine.search(query).hits
    print(f"{query:45s} -> {[h.doc_id for h in hits]}")


# Plain keyword search: every keyword is mandatory at this length.
show("ivc filter")

# Uppercase AND/OR/NOT (or symbols & | -) switch to boolean evaluation.
show("ivc AND NOT retriev*")
show("filter OR pump")

# Quoted phrases must match adjacent positions.
show('"hepatic arterial infusion pump"')
show('"no evidence of ivc filter"')

# Fielded terms restrict the match to one schema field.
show("Findings:cyst")

# The parser normalizes to a canonical printable form.
ast = parse_query("ivc AND (retriev* OR NOT complication)")
print("\nparsed:", pretty(ast))
