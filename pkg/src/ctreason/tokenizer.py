"""Word-level tokenizer with atomic routing tokens.

The vocabulary is a flat, ordered list of strings; a token's id is its list
position. Routing tokens ([seg], [det], [closer]) and the control tokens
([bos], [eos], [pad]) are ordinary vocabulary entries with reserved names,
never composed from characters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ConfigError, RangeError, UnknownTokenError

# Canonical surface forms of the reserved tokens.
SPECIAL_STRINGS = {
    "SEG": "[seg]",
    "DET": "[det]",
    "CLOSER": "[closer]",
    "BOS": "[bos]",
    "EOS": "[eos]",
    "PAD": "[pad]",
}

ROUTING_KINDS = ("SEG", "DET", "CLOSER")

MAX_VOCAB = 4096

TokenSequence = list  # list[int]; ids dense in [0, V)


@dataclass
class Vocabulary:
    tokens: list
    special: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.tokens) > MAX_VOCAB:
            raise ConfigError(f"vocabulary size {len(self.tokens)} exceeds {MAX_VOCAB}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ConfigError("duplicate vocabulary entries")
        self._token_to_id = {tok: i for i, tok in enumerate(self.tokens)}
        if not self.special:
            self.special = {
                name: self._token_to_id[s]
                for name, s in SPECIAL_STRINGS.items()
                if s in self._token_to_id
            }
        missing = [name for name in SPECIAL_STRINGS if name not in self.special]
        if missing:
            raise ConfigError(f"vocabulary lacks special tokens: {missing}")
        for name, idx in self.special.items():
            if self.tokens[idx] != SPECIAL_STRINGS[name]:
                raise ConfigError(
                    f"special {name} points at {self.tokens[idx]!r}, "
                    f"expected {SPECIAL_STRINGS[name]!r}"
                )
        if len(set(self.special.values())) != len(self.special):
            raise ConfigError("special token ids collide")

    # -- construction ------------------------------------------------------

    @classmethod
    def build(cls, corpus) -> "Vocabulary":
        """Build a vocabulary from an iterable of corpus strings.

        Specials come first in a fixed order, then corpus words sorted
        lexicographically, so ids are stable for a given corpus.
        """
        words = set()
        special_forms = set(SPECIAL_STRINGS.values())
        for text in corpus:
            for w in text.split():
                if w not in special_forms:
                    words.add(w)
        tokens = [SPECIAL_STRINGS[n] for n in SPECIAL_STRINGS] + sorted(words)
        return cls(tokens=tokens)

    # -- core ops ----------------------------------------------------------

    def __len__(self):
        return len(self.tokens)

    def encode(self, text: str) -> TokenSequence:
        words = text.split()
        if not words:
            raise UnknownTokenError("cannot encode empty text")
        ids = []
        for w in words:
            idx = self._token_to_id.get(w)
            if idx is None:
                raise UnknownTokenError(f"unknown token {w!r}")
            ids.append(idx)
        return ids

    def decode(self, seq: TokenSequence) -> str:
        parts = []
        for idx in seq:
            if not 0 <= idx < len(self.tokens):
                raise RangeError(f"token id {idx} outside [0, {len(self.tokens)})")
            parts.append(self.tokens[idx])
        return " ".join(parts)

    def find_routing_positions(self, seq: TokenSequence):
        """Positions and kinds of routing tokens, in increasing order."""
        by_id = {self.special[k]: k for k in ROUTING_KINDS}
        out = []
        for pos, idx in enumerate(seq):
            if not 0 <= idx < len(self.tokens):
                raise RangeError(f"token id {idx} outside [0, {len(self.tokens)})")
            kind = by_id.get(idx)
            if kind is not None:
                out.append((pos, kind))
        return out

    # -- persistence -------------------------------------------------------

    def to_json(self) -> dict:
        return {"tokens": list(self.tokens), "special": dict(self.special)}

    @classmethod
    def from_json(cls, payload: dict) -> "Vocabulary":
        return cls(tokens=list(payload["tokens"]), special=dict(payload["special"]))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path) as f:
            return cls.from_json(json.load(f))
