"""Walk through the text-analysis chain: normalization, tokenization,
stopword gaps, stemming, and word shingles.

Run with: python demos/01_text_analysis.py
"""

from radsearch import analysis
from radsearch.engine import SearchEngine
from radsearch.stemmer import stem

# Stemming folds inflected forms onto one searchable stem.
for word in ["retrieval", "retrieved", "retrieves", "stenting", "stents"]:
    print(f"{word:12s} -> {stem(word)}")

# Tokenization folds case and diacritics and keeps wildcard characters.
text = "Sjögren's syndrome; IVC filter NOT retrieved."
tokens = analysis.tokenize(text)
print("\ntokens:", [t.text for t in tokens])

# Each token remembers where it came from in the source string.
for t in tokens[:3]:
    lo, hi = t.char_span
    print(f"  {t.text!r} from source[{lo}:{hi}] = {text[lo:hi]!r}")

# Full analysis of an indexed field: stopwords are dropped but their
# positions are preserved as gaps, so phrases cannot jump across them.
# The analyzer configuration lives on the index snapshot (per-field
# stemming and shingling follow the registered schema).
analyzer = SearchEngine.with_default_schema().snapshot().analyzer
terms = analysis.analyze("no evidence of anoxic injury", "Findings", analyzer)
print("\nanalyzed Findings:", terms)

# Shingled fields additionally index word bigrams/trigrams for exact
# multi-word pattern credit (names, study descriptions).
terms = analysis.analyze("hepatic arterial infusion pump",
                         "StudyDescription", analyzer)
grams = [t for t, _ in terms if analysis.SHINGLE_SEP in t]
print("\nshingles:", [g.replace(analysis.SHINGLE_SEP, "+") for g in grams])
