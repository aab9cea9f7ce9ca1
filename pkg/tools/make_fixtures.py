#!/usr/bin/env python3
"""Regenerates the bundled fixture corpus under fixtures/.

Two deterministic synthetic text distributions:

  stage_a.txt  English-like ASCII prose (adapter-training corpus).
  stage_b.txt  An agglutinative Latin-script language with vowel harmony,
               stacked suffixes, and a handful of two-byte UTF-8 letters
               (the distribution-shifted adaptation corpus).

Everything is generated from fixed seeds, so the files are reproducible
and license-clean. Run from the repository root:

  python3 tools/make_fixtures.py
"""

import os

import numpy as np

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "fixtures")
STAGE_A_BYTES = 640_000
STAGE_B_BYTES = 384_000

DETS = ["the", "the", "the", "a", "a", "this", "that", "every", "each", "her",
        "his", "their", "our", "its", "one", "some", "any", "no"]

NOUNS = ["river", "harbor", "lantern", "village", "mountain", "letter",
         "garden", "window", "winter", "summer", "morning", "evening",
         "road", "bridge", "forest", "stone", "house", "market", "teacher",
         "child", "story", "song", "ship", "captain", "storm", "field",
         "valley", "tower", "library", "candle", "shadow", "journey",
         "door", "wall", "paper", "machine", "engine", "clock", "farmer",
         "miller", "baker", "north", "south", "coast", "island", "city",
         "street", "carriage", "horse", "dog", "bird", "fish", "tree",
         "branch", "leaf", "root", "meadow", "orchard", "barn", "well",
         "fountain", "square", "church", "bell", "fire", "smoke", "rain",
         "snow", "wind", "cloud", "star", "moon", "sun", "night", "day",
         "week", "month", "year", "hour", "minute", "voice", "word",
         "sentence", "book", "page", "ink", "desk", "chair", "table",
         "kitchen", "cellar", "attic", "roof", "floor", "ceiling", "lamp"]

ADJS = ["quiet", "old", "young", "bright", "dark", "heavy", "light", "long",
        "short", "narrow", "wide", "deep", "shallow", "warm", "cold",
        "gentle", "fierce", "patient", "careful", "sudden", "distant",
        "near", "early", "late", "green", "grey", "blue", "red", "white",
        "black", "golden", "silver", "wooden", "stone", "iron", "empty",
        "full", "silent", "loud", "steady", "restless", "weary", "eager",
        "humble", "proud", "simple", "strange", "familiar", "ancient",
        "modern", "broken", "mended", "hidden", "open", "closed", "small",
        "great", "little", "vast", "crooked", "straight"]

VERBS = ["carried", "watched", "followed", "opened", "closed", "crossed",
         "climbed", "reached", "remembered", "forgot", "wrote", "read",
         "counted", "measured", "repaired", "built", "painted", "gathered",
         "scattered", "planted", "harvested", "lifted", "lowered", "turned",
         "returned", "waited", "wandered", "hurried", "rested", "studied",
         "taught", "learned", "answered", "asked", "promised", "refused",
         "offered", "accepted", "noticed", "ignored", "greeted", "left",
         "found", "lost", "kept", "sold", "bought", "borrowed", "lent",
         "mended", "folded", "unfolded", "lit", "extinguished", "poured"]

ADVS = ["slowly", "quickly", "quietly", "carefully", "suddenly", "gently",
        "patiently", "eagerly", "often", "rarely", "always", "never",
        "finally", "early", "late", "steadily", "barely", "nearly",
        "almost", "again", "together", "alone", "soon", "once", "twice"]

PREPS = ["toward", "across", "beyond", "under", "over", "through", "beside",
         "behind", "before", "after", "between", "near", "past", "within",
         "without", "against", "along", "around", "above", "below"]

CONJS = ["and", "but", "while", "because", "although", "until", "when",
         "where", "so that", "as if", "as though", "even though"]

OPENERS = ["In the meantime", "Later that day", "By the next morning",
           "For many years", "At the edge of town", "After the rain",
           "Before the harvest", "During the long winter", "In those days",
           "Once in a while", "From the high window", "On market days"]


def _zipf_weights(n, s=1.05):
    w = 1.0 / np.power(np.arange(1, n + 1, dtype=np.float64), s)
    return w / w.sum()


class WordPicker:
    def __init__(self, rng, words):
        self.rng = rng
        self.words = list(words)
        self.p = _zipf_weights(len(self.words))

    def __call__(self):
        return self.words[self.rng.choice(len(self.words), p=self.p)]


def english_sentence(rng, pick):
    parts = []
    if rng.random() < 0.18:
        parts.append(rng.choice(OPENERS) + ",")
    np_1 = [rng.choice(DETS)]
    if rng.random() < 0.6:
        np_1.append(pick["adj"]())
    np_1.append(pick["noun"]())
    parts.extend(np_1)
    if rng.random() < 0.35:
        parts.append(pick["adv"]())
    parts.append(pick["verb"]())
    np_2 = [rng.choice(DETS)]
    if rng.random() < 0.45:
        np_2.append(pick["adj"]())
    np_2.append(pick["noun"]())
    parts.extend(np_2)
    if rng.random() < 0.55:
        parts.append(rng.choice(PREPS))
        parts.append(rng.choice(DETS))
        parts.append(pick["noun"]())
    if rng.random() < 0.2:
        parts.append(rng.choice(["in", "since", "until"]))
        parts.append(str(rng.integers(1780, 1930)))
    if rng.random() < 0.25:
        parts.append(rng.choice(CONJS))
        parts.append(rng.choice(DETS))
        parts.append(pick["noun"]())
        parts.append(pick["verb"]())
        parts.append(rng.choice(DETS))
        parts.append(pick["noun"]())
    text = " ".join(parts)
    text = text[0].upper() + text[1:]
    end = rng.choice(np.array([".", ".", ".", ".", "?", "!", ";"]))
    if end == ";":
        cont = " ".join([rng.choice(DETS), pick["noun"](), pick["verb"](),
                         rng.choice(DETS), pick["noun"]()])
        return text + "; " + cont + "."
    return text + end


def make_stage_a(seed=20_240_101, target=STAGE_A_BYTES):
    rng = np.random.default_rng(seed)
    pick = {"noun": WordPicker(rng, NOUNS), "adj": WordPicker(rng, ADJS),
            "verb": WordPicker(rng, VERBS), "adv": WordPicker(rng, ADVS)}
    chunks = []
    size = 0
    while size < target:
        n_sent = int(rng.integers(3, 8))
        para = " ".join(english_sentence(rng, pick) for _ in range(n_sent))
        chunks.append(para)
        size += len(para) + 2
    return "\n\n".join(chunks) + "\n"


BACK_V = ["a", "ı", "o", "u"]          # a ı o u
FRONT_V = ["e", "i", "ö", "ü"]    # e i ö ü
CONS = ["b", "d", "g", "j", "k", "l", "m", "n", "q", "r", "s", "t", "z",
        "sh", "zh", "ng"]

# suffix templates: C and V slots filled per harmony class
NOUN_SUFFIXES = [("l", "ar"), ("d", "a"), ("d", "an"), ("g", "a"),
                 ("n", "ıng"), ("m", "en"), ("s", "ı"),
                 ("b", "en"), ("d", "ıq")]
VERB_SUFFIXES = [("d", "ı"), ("g", "an"), ("m", "aq"), ("s", "a"),
                 ("ıp", ""), ("e", "di"), ("u", "")]


def harmonize(ending, front):
    """Maps a back-vowel suffix template onto the front-vowel row."""
    if not front:
        return ending
    table = {"a": "e", "ı": "i", "o": "ö", "u": "ü"}
    return "".join(table.get(ch, ch) for ch in ending)


def make_stage_b(seed=20_240_202, target=STAGE_B_BYTES):
    rng = np.random.default_rng(seed)

    def syllable(front):
        vowels = FRONT_V if front else BACK_V
        syl = rng.choice(CONS) + rng.choice(vowels)
        if rng.random() < 0.35:
            syl += rng.choice(["n", "r", "l", "s", "t", "q", "z"])
        return syl

    def make_stem():
        front = bool(rng.random() < 0.5)
        n_syl = int(rng.integers(1, 4))
        return "".join(syllable(front) for _ in range(n_syl)), front

    noun_stems = [make_stem() for _ in range(140)]
    verb_stems = [make_stem() for _ in range(80)]
    p_noun = _zipf_weights(len(noun_stems))
    p_verb = _zipf_weights(len(verb_stems))

    def inflect(stem, front, suffixes, max_suffixes):
        word = stem
        for _ in range(int(rng.integers(0, max_suffixes + 1))):
            c, v = suffixes[rng.integers(0, len(suffixes))]
            word += harmonize(c + v, front)
        return word

    def word():
        if rng.random() < 0.62:
            stem, front = noun_stems[rng.choice(len(noun_stems), p=p_noun)]
            return inflect(stem, front, NOUN_SUFFIXES, 3)
        stem, front = verb_stems[rng.choice(len(verb_stems), p=p_verb)]
        return inflect(stem, front, VERB_SUFFIXES, 2)

    def sentence():
        words = [word() for _ in range(int(rng.integers(4, 10)))]
        text = " ".join(words)
        text = text[0].upper() + text[1:]
        return text + rng.choice(np.array([".", ".", ".", "?", "!"]))

    chunks = []
    size = 0
    while size < target:
        n_sent = int(rng.integers(3, 7))
        para = " ".join(sentence() for _ in range(n_sent))
        chunks.append(para)
        size += len(para.encode("utf-8")) + 2
    return "\n\n".join(chunks) + "\n"


def main():
    os.makedirs(OUT_DIR, exist_ok=True)
    a = make_stage_a()
    b = make_stage_b()
    for name, text in [("stage_a.txt", a), ("stage_b.txt", b)]:
        path = os.path.join(OUT_DIR, name)
        data = text.encode("utf-8")
        data.decode("utf-8")  # must round-trip
        with open(path, "wb") as fh:
            fh.write(data)
        print(f"{name}: {len(data)} bytes")


if __name__ == "__main__":
    main()
