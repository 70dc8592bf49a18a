"""Token table loaded from a registry file.

The trainer never constructs maps itself; the registry JSON (map file names
plus a dense bijective token table) is the contract.  The table digest is
recomputed here and must match both the registry file and any checkpoint
the table is used with.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

PAD, BOS, EOS, SEP = "<pad>", "<s>", "</s>", ":"
DIRECTIONS = ("E", "W", "N", "S")


class VocabError(ValueError):
    pass


@dataclass
class Vocab:
    id_to_token: list[str]
    token_to_id: dict[str, int]
    digest: str

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def bos_id(self) -> int:
        return self.token_to_id[BOS]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS]

    @property
    def sep_id(self) -> int:
        return self.token_to_id[SEP]

    @property
    def direction_ids(self) -> tuple[int, ...]:
        return tuple(self.token_to_id[d] for d in DIRECTIONS)

    def encode(self, tokens: list[str] | str) -> list[int]:
        if isinstance(tokens, str):
            tokens = tokens.split()
        try:
            return [self.token_to_id[t] for t in tokens]
        except KeyError as exc:
            raise VocabError(f"token {exc.args[0]!r} is not in the registry table") from None

    def decode(self, ids) -> list[str]:
        return [self.id_to_token[int(i)] for i in ids]

    def node_ids(self, map_id: str) -> list[int]:
        prefix = f"{map_id}_"
        return [i for i, tok in enumerate(self.id_to_token) if tok.startswith(prefix)]


def table_digest(id_to_token: list[str]) -> str:
    payload = json.dumps(id_to_token, separators=(",", ":")).encode()
    return hashlib.sha256(payload).hexdigest()


def load_vocab(registry_path: str | Path) -> Vocab:
    data = json.loads(Path(registry_path).read_text(encoding="utf-8"))
    table: dict[str, int] = data["token_table"]
    id_to_token = [""] * len(table)
    for token, idx in table.items():
        if not 0 <= idx < len(table) or id_to_token[idx]:
            raise VocabError("registry token table is not a dense bijection")
        id_to_token[idx] = token
    digest = table_digest(id_to_token)
    if data.get("digest") and data["digest"] != digest:
        raise VocabError("registry digest does not match its token table")
    for required in (PAD, BOS, EOS, SEP, *DIRECTIONS):
        if required not in table:
            raise VocabError(f"registry table lacks required token {required!r}")
    return Vocab(id_to_token, dict(table), digest)
