"""Deterministic synthetic data: a small template grammar over ~200 words.

Used for desk-scale experiments: a pretraining corpus (unlabeled sentences)
and a labeled intent/slot task drawn from the same lexicon. Slot values may
span several tokens (e.g. "salt lake city", "the beatles"), so IOB transfer
through noisy alignment is exercised for real.
"""

from __future__ import annotations

import numpy as np

from .seeding import derive_seed
from .slu import OUTSIDE, TaggedUtterance
from .textcore import SPECIAL_TOKENS, Vocab

CITIES = [
    "boston", "denver", "seattle", "atlanta", "chicago", "dallas", "memphis",
    "tampa", "orlando", "phoenix", "oakland", "portland", "omaha", "reno",
    "tucson", "fresno", "boise", "madison", "austin", "nashville", "detroit",
    "new york", "san francisco", "los angeles", "salt lake city",
    "las vegas", "kansas city", "santa fe", "long beach",
]
DAYS = [
    "monday", "tuesday", "wednesday", "thursday", "friday", "saturday",
    "sunday", "today", "tomorrow", "tonight",
]
NUMBERS = [
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
    "ten", "eleven", "twelve",
]
MERIDIEMS = ["am", "pm"]
AIRLINES = ["united", "delta", "alaska", "southwest", "frontier", "horizon"]
CUISINES = [
    "italian", "mexican", "thai", "chinese", "indian", "french", "japanese",
    "greek", "korean", "turkish",
]
GENRES = [
    "jazz", "rock", "pop", "classical", "blues", "folk", "metal", "country",
    "soul", "funk", "disco", "reggae",
]
ARTISTS = [
    "the beatles", "miles davis", "nina simone", "elvis presley", "bob dylan",
    "aretha franklin", "daft punk", "johnny cash", "billie holiday", "ray charles",
    "john coltrane", "norah jones",
]

# slot name -> candidate surface strings
SLOT_VALUES = {
    "from_city": CITIES,
    "to_city": CITIES,
    "city": CITIES,
    "day": DAYS,
    "airline": AIRLINES,
    "cuisine": CUISINES,
    "party_size": NUMBERS,
    "time": [f"{n} {m}" for n in NUMBERS for m in MERIDIEMS],
    "genre": GENRES,
    "artist": ARTISTS,
}

# intent -> templates; {slot} expands to a value tagged B-slot / I-slot...
TEMPLATES = {
    "find_flight": [
        "book a flight from {from_city} to {to_city} on {day}",
        "show me flights from {from_city} to {to_city}",
        "i need a cheap {airline} flight to {to_city}",
        "find me a flight from {from_city} to {to_city} leaving {day}",
        "are there any {airline} flights from {from_city} on {day}",
    ],
    "check_weather": [
        "what is the weather like in {city} on {day}",
        "will it rain in {city} {day}",
        "give me the forecast for {city}",
        "how hot will it get in {city} {day}",
    ],
    "book_restaurant": [
        "reserve a table at a {cuisine} restaurant in {city} at {time}",
        "book a {cuisine} restaurant for {party_size} people {day}",
        "find me a good {cuisine} place in {city}",
    ],
    "set_alarm": [
        "set an alarm for {time} on {day}",
        "wake me up at {time} {day}",
        "remind me at {time} to check in",
    ],
    "play_music": [
        "play some {genre} music by {artist}",
        "put on {artist} songs",
        "i want to hear {genre} music",
        "play the best of {artist}",
    ],
}

# unlabeled filler for pretraining only (declarative contexts)
PRETRAIN_TEMPLATES = [
    "the {airline} flight to {to_city} departs on {day}",
    "the weather in {city} was {wx} all {day}",
    "a {cuisine} restaurant opened in {city} near the station",
    "{artist} recorded many great {genre} songs",
    "my alarm rang at {time} on {day}",
    "the flight from {from_city} to {to_city} was full",
    "people in {city} love {genre} music",
    "we had {cuisine} food for dinner at {time}",
    "the forecast for {city} says {wx} skies {day}",
    "the train from {from_city} arrives at {time}",
]
WEATHER_WORDS = ["sunny", "cloudy", "rainy", "windy", "stormy", "clear"]


def grammar_lexicon() -> list[str]:
    """Every word the grammar can emit, sorted and deduplicated."""
    words: set[str] = set(WEATHER_WORDS)
    for values in SLOT_VALUES.values():
        for v in values:
            words.update(v.split())
    for temps in TEMPLATES.values():
        for t in temps:
            words.update(w for w in t.split() if not w.startswith("{"))
    for t in PRETRAIN_TEMPLATES:
        words.update(w for w in t.split() if not w.startswith("{"))
    return sorted(words)


def synth_vocab() -> Vocab:
    """Fixed vocabulary covering the whole grammar (~200 words)."""
    return Vocab(list(SPECIAL_TOKENS) + grammar_lexicon())


def _fill(template: str, rng: np.random.Generator):
    """Expand one template -> (tokens, tags)."""
    toks: list[str] = []
    tags: list[str] = []
    for piece in template.split():
        if piece.startswith("{") and piece.endswith("}"):
            slot = piece[1:-1]
            if slot == "wx":
                toks.append(WEATHER_WORDS[rng.integers(len(WEATHER_WORDS))])
                tags.append(OUTSIDE)
                continue
            values = SLOT_VALUES[slot]
            value = values[rng.integers(len(values))]
            for k, w in enumerate(value.split()):
                toks.append(w)
                tags.append(("B-" if k == 0 else "I-") + slot)
        else:
            toks.append(piece)
            tags.append(OUTSIDE)
    return toks, tags


def synth_slu_utterances(n: int, vocab: Vocab, seed: int) -> list[TaggedUtterance]:
    """n labeled utterances, intents drawn uniformly."""
    rng = np.random.default_rng(derive_seed(seed, 0x51))
    intents = sorted(TEMPLATES)
    out: list[TaggedUtterance] = []
    for _ in range(n):
        intent = intents[rng.integers(len(intents))]
        temps = TEMPLATES[intent]
        toks, tags = _fill(temps[rng.integers(len(temps))], rng)
        out.append(TaggedUtterance(vocab.encode_tokens(toks), tags, intent))
    return out


def synth_slu_splits(
    n_train: int, n_val: int, n_test: int, vocab: Vocab, seed: int
) -> tuple[list[TaggedUtterance], list[TaggedUtterance], list[TaggedUtterance]]:
    """Disjoint RNG streams per split so sizes can change independently."""
    return (
        synth_slu_utterances(n_train, vocab, derive_seed(seed, 1)),
        synth_slu_utterances(n_val, vocab, derive_seed(seed, 2)),
        synth_slu_utterances(n_test, vocab, derive_seed(seed, 3)),
    )


def synth_corpus_text(n_sentences: int, seed: int) -> str:
    """Unlabeled pretraining sentences, one per line: a mix of declarative
    filler and the task grammar's surface forms (without labels)."""
    rng = np.random.default_rng(derive_seed(seed, 0x0C))
    slu_temps = [t for temps in TEMPLATES.values() for t in temps]
    lines = []
    for _ in range(n_sentences):
        if rng.random() < 0.5:
            t = PRETRAIN_TEMPLATES[rng.integers(len(PRETRAIN_TEMPLATES))]
        else:
            t = slu_temps[rng.integers(len(slu_temps))]
        toks, _ = _fill(t, rng)
        lines.append(" ".join(toks))
    return "\n".join(lines) + "\n"
