from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

from app.exceptions import DataError

PAD = "<pad>"
BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
RESERVED = (PAD, BOS, EOS, UNK)


class Vocab:
    """Character inventory; ids 0-3 are <pad>, <s>, </s>, <unk>."""

    pad_id = 0
    bos_id = 1
    eos_id = 2
    unk_id = 3

    def __init__(self, characters: Sequence[str]):
        for ch in characters:
            if len(ch) != 1:
                raise DataError(f"vocabulary entries must be single characters, got {ch!r}")
        if len(set(characters)) != len(characters):
            raise DataError("vocabulary contains duplicate characters")
        self.characters: List[str] = list(characters)
        self.symbols: List[str] = list(RESERVED) + self.characters
        self._ids: Dict[str, int] = {ch: i + len(RESERVED) for i, ch in enumerate(self.characters)}

    def __len__(self) -> int:
        return len(self.symbols)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and other.characters == self.characters

    def __repr__(self) -> str:
        return f"Vocab(size={len(self)})"

    def encode(self, text: str) -> List[int]:
        return [self._ids.get(ch, self.unk_id) for ch in text]

    def decode(self, ids: Iterable[int]) -> str:
        """Characters for the non-reserved ids; stops at </s>."""
        out = []
        for i in ids:
            i = int(i)
            if i == self.eos_id:
                break
            if i >= len(RESERVED):
                out.append(self.symbols[i])
        return "".join(out)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text("".join(f"{ch}\n" for ch in self.characters), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocab":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


def build_vocab(transcripts: Iterable[str]) -> Vocab:
    """Sorted unique characters of the corpus after the reserved symbols."""
    characters = set()
    count = 0
    for text in transcripts:
        characters.update(text)
        count += 1
    if count == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")
    return Vocab(sorted(characters))
