"""Frequency-ranked word vocabularies and the radix digit codec.

A word index ``i`` is factorized into ``d`` base-``v`` digits, so the model
only ever sees token ids in ``0..v+1`` (digits plus BOS/EOS).  The embedding
tables shrink from ``|V|+2`` rows to ``v+2`` rows while the word-level
vocabulary can keep growing.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, field

UNK = "<UNK>"

WORD_MODE = "word_level"
RADIX_MODE = "radix"


@dataclass(frozen=True)
class TokenStream:
    """A flat sequence of token ids plus the codec mode that produced it."""

    ids: tuple[int, ...]
    mode: str = RADIX_MODE

    def __len__(self) -> int:
        return len(self.ids)

    def to_text(self) -> str:
        return " ".join(str(i) for i in self.ids)

    @staticmethod
    def from_text(text: str, mode: str = RADIX_MODE) -> "TokenStream":
        return TokenStream(tuple(int(t) for t in text.split()), mode)


@dataclass(frozen=True)
class WordVocab:
    """Words ranked by descending corpus frequency; <UNK> holds the last index."""

    words: tuple[str, ...]
    counts: tuple[int, ...]
    index_of: dict[str, int] = field(repr=False)

    @property
    def unk_index(self) -> int:
        return len(self.words) - 1

    def __len__(self) -> int:
        return len(self.words)

    def index(self, word: str) -> int:
        """Index of `word`, falling back to the <UNK> index."""
        return self.index_of.get(word, self.unk_index)

    def word(self, i: int) -> str:
        return self.words[i]

    # word-level BOS/EOS follow the regular words, mirroring the radix layout
    @property
    def bos_index(self) -> int:
        return len(self.words)

    @property
    def eos_index(self) -> int:
        return len(self.words) + 1

    def save(self, path: str) -> None:
        """One `word<TAB>count` line per entry, line number = index."""
        with open(path, "w", encoding="utf-8") as fh:
            for w, c in zip(self.words, self.counts):
                fh.write(f"{w}\t{c}\n")

    @staticmethod
    def load(path: str) -> "WordVocab":
        words, counts = [], []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                w, c = line.split("\t")
                words.append(w)
                counts.append(int(c))
        if not words or words[-1] != UNK:
            raise ValueError(f"vocabulary file {path!r} must end with the {UNK} entry")
        return WordVocab(tuple(words), tuple(counts), {w: i for i, w in enumerate(words)})


def tokenize(caption: str) -> list[str]:
    """Whitespace tokenization; callers normalize case/punctuation upstream."""
    return caption.split()


def build_vocab(corpus, min_frequency: int = 5) -> WordVocab:
    """Rank corpus words by descending frequency (ties: ascending lexicographic).

    Words rarer than `min_frequency` are dropped and collapse onto the
    reserved <UNK> entry, which always takes the last regular index and
    carries the aggregate count of everything it absorbed.
    """
    if min_frequency < 1:
        raise ValueError("min_frequency must be >= 1")
    freq = collections.Counter()
    n_captions = 0
    for caption in corpus:
        n_captions += 1
        freq.update(tokenize(caption))
    if n_captions == 0:
        raise ValueError("empty corpus")
    kept = sorted(
        ((w, c) for w, c in freq.items() if c >= min_frequency),
        key=lambda wc: (-wc[1], wc[0]),
    )
    dropped = sum(c for _, c in freq.items() if c < min_frequency)
    words = tuple(w for w, _ in kept) + (UNK,)
    counts = tuple(c for _, c in kept) + (dropped,)
    return WordVocab(words, counts, {w: i for i, w in enumerate(words)})


def radix_digits(vocab_size: int, base_v: int) -> int:
    """Smallest d >= 1 with base_v**d >= vocab_size."""
    if base_v < 2:
        raise ValueError(f"radix base must be >= 2, got {base_v}")
    if vocab_size < 1:
        raise ValueError("vocab_size must be >= 1")
    d, span = 1, base_v
    while span < vocab_size:
        d += 1
        span *= base_v
    return d


@dataclass(frozen=True)
class RadixVocab:
    """Digit codec over a word vocabulary: id space is 0..v+1 (v=BOS, v+1=EOS)."""

    word_vocab: WordVocab
    base_v: int
    digits_d: int

    def __post_init__(self):
        if self.base_v < 2:
            raise ValueError(f"radix base must be >= 2, got {self.base_v}")
        if self.base_v ** self.digits_d < len(self.word_vocab):
            raise ValueError(
                f"base {self.base_v}^{self.digits_d} cannot represent "
                f"{len(self.word_vocab)} words"
            )

    @staticmethod
    def for_vocab(word_vocab: WordVocab, base_v: int) -> "RadixVocab":
        return RadixVocab(word_vocab, base_v, radix_digits(len(word_vocab), base_v))

    @property
    def bos_id(self) -> int:
        return self.base_v

    @property
    def eos_id(self) -> int:
        return self.base_v + 1

    @property
    def encoded_size(self) -> int:
        """Model-facing vocabulary cardinality: v digits + BOS + EOS."""
        return self.base_v + 2

    @property
    def mode(self) -> str:
        return RADIX_MODE

    def encode_index(self, i: int) -> tuple[int, ...]:
        """Digits of word index `i`, least-significant first; BOS/EOS map to (v,)/(v+1,)."""
        if i == self.word_vocab.bos_index:
            return (self.bos_id,)
        if i == self.word_vocab.eos_index:
            return (self.eos_id,)
        if i < 0 or i >= self.base_v ** self.digits_d:
            raise ValueError(f"index out of radix range: {i}")
        digits = []
        for _ in range(self.digits_d):
            digits.append(i % self.base_v)
            i //= self.base_v
        return tuple(digits)

    def decode_digits(self, digits, strict: bool = False) -> int:
        """Word index of a complete digit group (inverse of encode_index)."""
        if len(digits) != self.digits_d:
            raise ValueError(f"expected {self.digits_d} digits, got {len(digits)}")
        i = 0
        for j, dig in enumerate(digits):
            if dig < 0 or dig >= self.base_v:
                raise ValueError(f"special token inside digit group: {dig}")
            i += dig * self.base_v ** j
        if i >= len(self.word_vocab):
            if strict:
                raise ValueError(f"decoded index {i} outside vocabulary")
            return self.word_vocab.unk_index
        return i

    def encode_caption(self, words) -> TokenStream:
        """BOS ++ per-word digit groups ++ EOS; length is 2 + d*len(words)."""
        ids = [self.bos_id]
        for w in words:
            ids.extend(self.encode_index(self.word_vocab.index(w)))
        ids.append(self.eos_id)
        return TokenStream(tuple(ids), RADIX_MODE)

    def decode_stream(self, ts, strict: bool = False) -> list[str]:
        """Words from a radix stream.

        Skips a leading BOS, stops at EOS, and silently drops a trailing
        incomplete digit group.  A BOS mid-stream is an error in strict mode
        and skipped otherwise.
        """
        ids = ts.ids if isinstance(ts, TokenStream) else tuple(ts)
        pos = 1 if ids and ids[0] == self.bos_id else 0
        words, group = [], []
        for t in ids[pos:]:
            if t == self.eos_id:
                break
            if t == self.bos_id:
                if strict:
                    raise ValueError("BOS appeared mid-stream")
                continue
            group.append(t)
            if len(group) == self.digits_d:
                words.append(self.word_vocab.word(self.decode_digits(group, strict)))
                group = []
        return words


@dataclass(frozen=True)
class WordLevelCodec:
    """Baseline codec: one id per word, BOS/EOS appended after the regular words."""

    word_vocab: WordVocab

    @property
    def bos_id(self) -> int:
        return self.word_vocab.bos_index

    @property
    def eos_id(self) -> int:
        return self.word_vocab.eos_index

    @property
    def encoded_size(self) -> int:
        return len(self.word_vocab) + 2

    @property
    def mode(self) -> str:
        return WORD_MODE

    def encode_caption(self, words) -> TokenStream:
        ids = [self.bos_id]
        ids.extend(self.word_vocab.index(w) for w in words)
        ids.append(self.eos_id)
        return TokenStream(tuple(ids), WORD_MODE)

    def decode_stream(self, ts, strict: bool = False) -> list[str]:
        ids = ts.ids if isinstance(ts, TokenStream) else tuple(ts)
        pos = 1 if ids and ids[0] == self.bos_id else 0
        words = []
        for t in ids[pos:]:
            if t == self.eos_id:
                break
            if t == self.bos_id:
                if strict:
                    raise ValueError("BOS appeared mid-stream")
                continue
            if t >= len(self.word_vocab):
                if strict:
                    raise ValueError(f"token id {t} outside vocabulary")
                t = self.word_vocab.unk_index
            words.append(self.word_vocab.word(t))
        return words


def make_codec(word_vocab: WordVocab, radix_base: int):
    """radix_base > 0 selects the digit codec, 0 the word-level baseline."""
    if radix_base > 0:
        return RadixVocab.for_vocab(word_vocab, radix_base)
    return WordLevelCodec(word_vocab)
