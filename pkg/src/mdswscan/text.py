"""Text normalization applied before any matching.

Two forms are used throughout the package:

* ``canonical`` -- NFKC. Folds full-width ASCII to half-width, the ideographic
  space to a plain space, and compatibility ideographs to their unified forms.
  Every text field of a :class:`~mdswscan.records.DeviceRecord` is stored in
  this form.
* ``fold`` -- the caseless matching key: ``NFKC(casefold(NFKC(s)))``. Keyword
  terms and record text both pass through it, so matching is case-, width- and
  compatibility-insensitive.
"""

from __future__ import annotations

from unicodedata import normalize

__all__ = ["canonical", "fold"]

# Full-width punctuation common in registry text. Each maps to its NFKC
# compatibility decomposition, a single ASCII character, so substituting first
# leaves the NFKC result unchanged while letting ``normalize`` take its quick
# path on otherwise-normalized text (an order of magnitude faster).
_WIDE = tuple(
    (w, normalize("NFKC", w)) for w in "，（）：；、　！？．－／％＋＝＜＞［］"
    if normalize("NFKC", w) != w
)


def _nfkc(text: str) -> str:
    for wide, narrow in _WIDE:
        if wide in text:
            text = text.replace(wide, narrow)
    return normalize("NFKC", text)


def canonical(text: str | None) -> str:
    if not text:
        return ""
    if text.isascii():
        return text
    return _nfkc(text)


def fold(text: str | None) -> str:
    if not text:
        return ""
    if text.isascii():
        return text.lower()  # NFKC is the identity on ASCII, casefold is lower
    once = _nfkc(text)
    folded = once.casefold()
    # CJK text has no case; skip the second pass when casefold changed nothing
    return once if folded == once else normalize("NFKC", folded)
