"""Closed toy instruction vocabulary: phrases, word tokens and their ids."""
from __future__ import annotations

STRAIGHT, LEFT, RIGHT, STOP = "straight", "left", "right", "stop"

# Paraphrases per manoeuvre; the scenario generator picks one per segment.
PHRASES: dict[str, tuple[str, ...]] = {
    STRAIGHT: (
        "go straight along this road",
        "keep following the current lane",
        "drive forward and stay in lane",
        "continue straight ahead",
    ),
    LEFT: (
        "turn left at the next corner",
        "take the next left turn",
        "please make a left turn ahead",
        "bear left and follow the road",
    ),
    RIGHT: (
        "turn right at the next corner",
        "take the next right turn",
        "please make a right turn ahead",
        "bear right and follow the road",
    ),
    STOP: (
        "stop at the marker ahead",
        "come to a stop at the marker",
    ),
}

MAX_TOKENS = 8

PHRASE_LIST: list[tuple[str, str]] = [(kind, p) for kind, ps in PHRASES.items() for p in ps]
WORDS: list[str] = sorted({w for _, p in PHRASE_LIST for w in p.split()})
WORD_ID: dict[str, int] = {w: i for i, w in enumerate(WORDS)}
VOCAB_SIZE = len(WORDS)

assert len(PHRASE_LIST) <= 64
assert all(len(p.split()) <= MAX_TOKENS for _, p in PHRASE_LIST)


def phrase_ids(kind: str) -> list[int]:
    """Phrase indices (into PHRASE_LIST) describing a manoeuvre."""
    return [i for i, (k, _) in enumerate(PHRASE_LIST) if k == kind]


def tokenize(phrase_index: int) -> list[int]:
    _, text = PHRASE_LIST[phrase_index]
    return [WORD_ID[w] for w in text.split()]


def phrase_kind(phrase_index: int) -> str:
    return PHRASE_LIST[phrase_index][0]
