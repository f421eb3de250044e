"""Aho-Corasick multi-pattern matcher over characters.

States are integers; ``_goto[s]`` maps a character to the next state and
``_fail[s]`` is the longest proper suffix of the state's path that is also a
path in the trie. ``_out[s]`` holds every pattern ending at ``s``, including
those inherited through the failure chain, so a scan reports overlapping and
nested matches in one pass.
"""

from __future__ import annotations

from collections import deque
from collections.abc import Iterable, Iterator


class KeywordAutomaton:
    def __init__(self, patterns: Iterable[str]) -> None:
        self._goto: list[dict[str, int]] = [{}]
        self._fail: list[int] = [0]
        self._out: list[tuple[str, ...]] = [()]
        unique = sorted({p for p in patterns if p})
        for pattern in unique:
            self._insert(pattern)
        self._link()
        self.patterns: frozenset[str] = frozenset(unique)

    def _insert(self, pattern: str) -> None:
        state = 0
        for ch in pattern:
            nxt = self._goto[state].get(ch)
            if nxt is None:
                nxt = len(self._goto)
                self._goto.append({})
                self._fail.append(0)
                self._out.append(())
                self._goto[state][ch] = nxt
            state = nxt
        self._out[state] = (pattern,)

    def _link(self) -> None:
        queue = deque(self._goto[0].values())
        while queue:
            state = queue.popleft()
            for ch, child in self._goto[state].items():
                queue.append(child)
                f = self._fail[state]
                while f and ch not in self._goto[f]:
                    f = self._fail[f]
                target = self._goto[f].get(ch, 0)
                self._fail[child] = target if target != child else 0
                if self._out[self._fail[child]]:
                    self._out[child] = self._out[child] + self._out[self._fail[child]]

    def __len__(self) -> int:
        return len(self.patterns)

    def finditer(self, text: str) -> Iterator[tuple[int, str]]:
        """Yield ``(start, pattern)`` for every occurrence, in order of end offset."""
        goto, fail, out = self._goto, self._fail, self._out
        state = 0
        for i, ch in enumerate(text):
            while state and ch not in goto[state]:
                state = fail[state]
            state = goto[state].get(ch, 0)
            for pattern in out[state]:
                yield i - len(pattern) + 1, pattern

    def hits(self, text: str) -> set[str]:
        return {pattern for _, pattern in self.finditer(text)}

    def contains_any(self, text: str) -> bool:
        return next(self.finditer(text), None) is not None
