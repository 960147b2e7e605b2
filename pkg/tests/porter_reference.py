"""Independent reference implementation of the 1980 suffix-stripping
algorithm, used only as a cross-check oracle by the stemmer tests.

Deliberately written in a different style from the library version
(CV-pattern strings and data-driven rule tables with condition guards)
so the two cannot share a bug by construction.
"""

import re

_M_RE = re.compile("v+c+")


def _cv_pattern(word: str) -> str:
    pat = []
    for i, ch in enumerate(word):
        if ch in "aeiou":
            pat.append("v")
        elif ch == "y":
            pat.append("c" if i == 0 or pat[i - 1] == "v" else "v")
        else:
            pat.append("c")
    return "".join(pat)


def _m(stem: str) -> int:
    return len(_M_RE.findall(_cv_pattern(stem)))


def _has_vowel(stem: str) -> bool:
    return "v" in _cv_pattern(stem)


def _ends_cc(word: str) -> bool:
    return (len(word) >= 2 and word[-1] == word[-2]
            and _cv_pattern(word)[-1] == "c")


def _ends_cvc_not_wxy(word: str) -> bool:
    return (len(word) >= 3 and _cv_pattern(word).endswith("cvc")
            and word[-1] not in "wxy")


def _longest(word: str, table):
    """(suffix, replacement, condition) of the longest matching suffix."""
    hit = None
    for suffix, repl, cond in table:
        if word.endswith(suffix) and (hit is None or len(suffix) > len(hit[0])):
            hit = (suffix, repl, cond)
    return hit


def _table_step(word: str, table) -> str:
    hit = _longest(word, table)
    if hit is None:
        return word
    suffix, repl, cond = hit
    stem = word[: len(word) - len(suffix)]
    if cond is None or cond(stem):
        return stem + repl
    return word


_STEP2 = [(s, r, lambda st: _m(st) > 0) for s, r in [
    ("ational", "ate"), ("tional", "tion"), ("enci", "ence"), ("anci", "ance"),
    ("izer", "ize"), ("abli", "able"), ("alli", "al"), ("entli", "ent"),
    ("eli", "e"), ("ousli", "ous"), ("ization", "ize"), ("ation", "ate"),
    ("ator", "ate"), ("alism", "al"), ("iveness", "ive"), ("fulness", "ful"),
    ("ousness", "ous"), ("aliti", "al"), ("iviti", "ive"), ("biliti", "ble"),
]]

_STEP3 = [(s, r, lambda st: _m(st) > 0) for s, r in [
    ("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"),
    ("ical", "ic"), ("ful", ""), ("ness", ""),
]]


def _ion_guard(st: str) -> bool:
    return _m(st) > 1 and st.endswith(("s", "t"))


_STEP4 = [
    ("al", "", lambda st: _m(st) > 1), ("ance", "", lambda st: _m(st) > 1),
    ("ence", "", lambda st: _m(st) > 1), ("er", "", lambda st: _m(st) > 1),
    ("ic", "", lambda st: _m(st) > 1), ("able", "", lambda st: _m(st) > 1),
    ("ible", "", lambda st: _m(st) > 1), ("ant", "", lambda st: _m(st) > 1),
    ("ement", "", lambda st: _m(st) > 1), ("ment", "", lambda st: _m(st) > 1),
    ("ent", "", lambda st: _m(st) > 1), ("ion", "", _ion_guard),
    ("ou", "", lambda st: _m(st) > 1), ("ism", "", lambda st: _m(st) > 1),
    ("ate", "", lambda st: _m(st) > 1), ("iti", "", lambda st: _m(st) > 1),
    ("ous", "", lambda st: _m(st) > 1), ("ive", "", lambda st: _m(st) > 1),
    ("ize", "", lambda st: _m(st) > 1),
]


def reference_stem(word: str) -> str:
    if len(word) <= 2:
        return word

    # step 1a
    for suffix, repl in (("sses", "ss"), ("ies", "i"), ("ss", "ss"), ("s", "")):
        if word.endswith(suffix):
            word = word[: len(word) - len(suffix)] + repl
            break

    # step 1b
    if word.endswith("eed"):
        if _m(word[:-3]) > 0:
            word = word[:-1]
    else:
        stripped = None
        if word.endswith("ed") and _has_vowel(word[:-2]):
            stripped = word[:-2]
        elif word.endswith("ing") and _has_vowel(word[:-3]):
            stripped = word[:-3]
        if stripped is not None:
            if stripped.endswith(("at", "bl", "iz")):
                word = stripped + "e"
            elif _ends_cc(stripped) and stripped[-1] not in "lsz":
                word = stripped[:-1]
            elif _m(stripped) == 1 and _ends_cvc_not_wxy(stripped):
                word = stripped + "e"
            else:
                word = stripped

    # step 1c
    if word.endswith("y") and _has_vowel(word[:-1]):
        word = word[:-1] + "i"

    word = _table_step(word, _STEP2)
    word = _table_step(word, _STEP3)
    word = _table_step(word, _STEP4)

    # step 5a
    if word.endswith("e"):
        stem = word[:-1]
        m = _m(stem)
        if m > 1 or (m == 1 and not _ends_cvc_not_wxy(stem)):
            word = stem

    # step 5b
    if word.endswith("ll") and _m(word) > 1:
        word = word[:-1]

    return word
