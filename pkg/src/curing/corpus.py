"""
Seeded synthetic token corpus.

Sequences are produced with integer-only arithmetic so the same seed gives the
same token ids on every platform:

* a 31-bit linear congruential generator ``x <- (1103515245 x + 12345) mod 2^31``
  seeded with ``seed mod 2^31`` drives every choice;
* the first token of a sequence is ``x mod vocab``;
* each later token follows a trigram rule ``(7 * prev + prev2 + 3) mod vocab``
  with probability ``bias`` (decided by ``x < bias * 2^31``), otherwise it is a
  fresh ``x mod vocab`` draw.

The rule gives a small model something learnable while keeping a noise floor.
"""

import numpy as np

__all__ = ["Lcg", "synthetic_corpus", "split_corpus", "data_split"]

_A = 1103515245
_C = 12345
_MOD = 2**31


class Lcg:
    def __init__(self, seed: int):
        self.state = int(seed) % _MOD

    def next(self) -> int:
        self.state = (_A * self.state + _C) % _MOD
        return self.state


def synthetic_corpus(n_seqs: int, seq_len: int, vocab: int, seed: int,
                     bias: float = 0.75) -> np.ndarray:
    """Return an ``(n_seqs, seq_len)`` int64 array of token ids."""
    if n_seqs < 0 or seq_len < 1 or vocab < 2:
        raise ValueError("need n_seqs >= 0, seq_len >= 1, vocab >= 2")
    gen = Lcg(seed)
    threshold = int(bias * _MOD)
    out = np.empty((n_seqs, seq_len), dtype=np.int64)
    for s in range(n_seqs):
        prev2 = 0
        prev = gen.next() % vocab
        out[s, 0] = prev
        for t in range(1, seq_len):
            if gen.next() < threshold:
                tok = (7 * prev + prev2 + 3) % vocab
            else:
                tok = gen.next() % vocab
            out[s, t] = tok
            prev2, prev = prev, tok
    return out


def split_corpus(corpus: np.ndarray, n_first: int) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint head/tail split (calibration vs. healing data)."""
    return corpus[:n_first], corpus[n_first:]


# stream offsets keep the three splits independent of each other's sizes
_SPLIT_OFFSETS = {"calib": 0, "heal": 1_000_003, "eval": 2_000_006}


def data_split(name: str, n_seqs: int, seq_len: int, vocab: int, seed: int) -> np.ndarray:
    """One of the ``calib`` / ``heal`` / ``eval`` streams for a given seed."""
    return synthetic_corpus(n_seqs, seq_len, vocab, seed + _SPLIT_OFFSETS[name])
