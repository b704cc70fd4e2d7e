"""Token <-> id mapping with frequency counts."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

UNK = "[UNK]"


class UnknownTokenError(KeyError):
    def __init__(self, token: str):
        super().__init__(token)
        self.token = token

    def __str__(self) -> str:
        return f"token not in vocabulary: {self.token!r}"


@dataclass(frozen=True)
class Vocabulary:
    id_to_token: tuple[str, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.id_to_token) != len(self.counts):
            raise ValueError("id_to_token and counts differ in length")
        if len(set(self.id_to_token)) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "_index", {t: k for k, t in enumerate(self.id_to_token)})

    @property
    def token_to_id(self) -> dict[str, int]:
        return dict(self._index)

    @property
    def v(self) -> int:
        return len(self.id_to_token)

    def __len__(self) -> int:
        return self.v

    def __contains__(self, token: str) -> bool:
        return token in self._index

    @property
    def unk_id(self) -> int | None:
        return self._index.get(UNK)

    def id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise UnknownTokenError(token) from None

    def ids(self, tokens: Iterable[str], unknown_as_unk: bool = False) -> list[int]:
        """Look up every token. With ``unknown_as_unk`` unseen tokens map to ``[UNK]``."""
        if unknown_as_unk:
            unk = self.unk_id
            if unk is None:
                raise ValueError("vocabulary has no [UNK] entry")
            return [self._index.get(t, unk) for t in tokens]
        return [self.id(t) for t in tokens]

    def tokens(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def to_json(self) -> str:
        return json.dumps([{"token": t, "count": c} for t, c in zip(self.id_to_token, self.counts)], indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        entries = json.loads(text)
        return cls(tuple(e["token"] for e in entries), tuple(int(e["count"]) for e in entries))

    def to_list(self) -> list[dict]:
        return [{"token": t, "count": c} for t, c in zip(self.id_to_token, self.counts)]

    @classmethod
    def from_list(cls, entries: list[dict]) -> "Vocabulary":
        return cls(tuple(e["token"] for e in entries), tuple(int(e["count"]) for e in entries))


def build_vocabulary(streams: Iterable[Sequence[str]], reserve_unk: bool = False) -> Vocabulary:
    """Ids by descending frequency, ties broken lexicographically.

    ``streams`` is an iterable of token lists. With ``reserve_unk`` a ``[UNK]``
    entry with count 0 is appended as the last id.
    """
    counter = Counter()
    for s in streams:
        counter.update(s)
    if not counter:
        raise ValueError("cannot build a vocabulary from an empty stream")
    if reserve_unk and UNK in counter:
        raise ValueError(f"{UNK} is reserved and may not occur in the data")
    ordered = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))
    toks = [t for t, _ in ordered]
    counts = [c for _, c in ordered]
    if reserve_unk:
        toks.append(UNK)
        counts.append(0)
    return Vocabulary(tuple(toks), tuple(counts))
