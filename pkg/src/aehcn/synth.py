"""Synthetic restaurant-finding corpus for desk-scale experiments.

A three-slot (area, cuisine, price), ten-action grammar produces dialogs
whose gold policy is a deterministic function of the utterance class, the
cumulative slot flags and the previous action. The generator also emits a
foreign-domain utterance pool (bus/weather/calendar/banking requests), a
mistake-affirmation segment pool, and the slot lexicon.

Filler-word noise is injected at a low rate into train/dev utterances and
at a higher rate (and higher word count) into test utterances, so the test
reconstruction-score distribution has the heavier right tail real corpora
show while the inserted words stay mostly in vocabulary. A small share of
test insertions draws from a disjoint bank (genuinely unseen words), and a
few "hard" training openers carry several filler words each; they anchor
the maximum training reconstruction score used by the counterfeit sampler
and the independent threshold rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .nn import RngStream

AREAS = ("north", "south", "east", "west", "central")
CUISINES = ("italian", "chinese", "indian", "french", "thai")
PRICES = ("cheap", "moderate", "expensive")

SLOT_LEXICON = {"area": list(AREAS), "cuisine": list(CUISINES), "price": list(PRICES)}

ACTION_GREET = "hello , how can i help you ?"
ACTION_REQUEST_AREA = "which part of town do you prefer ?"
ACTION_REQUEST_CUISINE = "what kind of food would you like ?"
ACTION_REQUEST_PRICE = "what price range are you looking for ?"
ACTION_API_CALL = "api_call cuisine area price"
ACTION_OFFER = "here is a place matching your request ."
ACTION_OFFER_ALT = "here is another option for you ."
ACTION_BYE = "you are welcome , goodbye ."

REQUEST_ACTIONS = {"area": ACTION_REQUEST_AREA, "cuisine": ACTION_REQUEST_CUISINE,
                   "price": ACTION_REQUEST_PRICE}
SLOT_ORDER = ("area", "cuisine", "price")

GREETINGS = (
    "hello",
    "hi there",
    "good evening",
    "hello i need some help",
    "sorry to bother you",
)

# opener templates grouped by the slots they mention
OPENERS_0 = (
    "i am looking for a restaurant",
    "i need a place to eat",
    "can you find me a restaurant",
    "my friends and i want to eat out",
)
OPENERS_1 = (
    "hello i want to find a {cuisine} restaurant",
    "i am searching for a {cuisine} place",
    "i want a restaurant in the {area} of the city",
    "find me a place in the {area} part of town",
    "i need something {price} to eat",
    "looking for a {price} restaurant please",
)
OPENERS_2 = (
    "hi i am looking for a {price} restaurant in the {area}",
    "i want {cuisine} food in the {area} part of town",
    "find me a {price} place serving {cuisine} food",
    "my family wants {cuisine} food at a {price} place",
    "something {price} in the {area} please",
)
OPENERS_3 = (
    "i want {cuisine} food in the {area} at a {price} price",
    "find a {price} {cuisine} restaurant in the {area} please",
)

ANSWERS = {
    "area": (
        "in the {area} please",
        "the {area} part of town",
        "somewhere {area}",
        "{area}",
        "make it the {area} side",
        "oh sorry yes the {area} please",
    ),
    "cuisine": (
        "i would like {cuisine} food",
        "{cuisine} please",
        "how about {cuisine}",
        "{cuisine} cuisine sounds good",
        "let us do {cuisine}",
        "sorry i would say {cuisine}",
    ),
    "price": (
        "{price} please",
        "a {price} one",
        "i want something {price}",
        "the {price} price range",
        "{price} works for me",
    ),
}

SHOW_REQUESTS = (
    "ok what did you find",
    "what do you have for me",
    "any suggestions",
    "show me the options please",
    "can you give me a recommendation",
    "oh ok what did you find",
)
REJECTS = (
    "i do not like that one can you find another",
    "something else please",
    "no never mind show me a different place",
    "give me another option",
)
ACCEPTS = (
    "that sounds good thank you bye",
    "great that works goodbye",
    "perfect thanks a lot bye",
    "wonderful thank you so much goodbye",
    "sounds good to me bye bye",
    "oh i am happy with that one thank you",
)

# glue for the hard openers; the {r} slots take rare-bank words
HARD_OPENERS = (
    "um well honestly i have been {r} {r} searching simply everywhere for somewhere {r} decent to dine",
    "listen i {r} must find a {r} truly {r} spot to eat {r} tonight",
    "so {r} my {r} stomach is {r} rumbling and i need food {r} now",
)

RARE_WORDS = (
    "absolutely", "basically", "literally", "frankly", "genuinely", "utterly",
    "remarkably", "positively", "dreadfully", "awfully", "frightfully",
    "tremendously", "exceedingly", "marvelously", "spectacularly", "gloriously",
    "famished", "ravenous", "peckish", "starving", "weary", "exhausted",
    "delightful", "charming", "quaint", "cozy", "fancy", "stylish", "posh",
    "swanky", "divine", "splendid", "superb", "exquisite", "magnificent",
    "wandering", "strolling", "roaming", "trudging", "hiking", "rushing",
    "promptly", "speedily", "swiftly", "urgently",
)

TEST_RARE_WORDS = (
    "seriously", "definitely", "certainly", "obviously", "apparently",
    "incredibly", "unbelievably", "extraordinarily", "phenomenally",
    "hungry", "craving", "yearning", "longing", "desperate",
    "elegant", "rustic", "trendy", "hip", "modern", "classic",
    "outstanding", "fabulous", "terrific", "stunning", "gorgeous",
)

FOREIGN_UTTERANCES = (
    "what time is the next bus to downtown",
    "when does the last train leave tonight",
    "how often does the airport shuttle run",
    "is the subway running on schedule today",
    "which platform does the express depart from",
    "will it rain tomorrow afternoon",
    "what is the weather forecast for this weekend",
    "how cold will it get tonight",
    "is there a storm warning for tomorrow",
    "should i bring an umbrella today",
    "set an alarm for seven in the morning",
    "remind me to call my dentist on friday",
    "add a meeting with the team to my calendar",
    "what is on my schedule for monday",
    "cancel my appointment next tuesday",
    "when does the movie start tonight",
    "buy two tickets for the late show",
    "what films are playing this week",
    "is the new action movie any good",
    "reserve seats for the evening screening",
    "check my account balance please",
    "transfer fifty dollars to my savings",
    "when is my credit card payment due",
    "show me my recent transactions",
    "how much did i spend last month",
    "play some jazz music",
    "turn up the volume a little",
    "skip to the next song",
    "put on my workout playlist",
    "who sings this track",
    "how long is the drive to the airport",
    "navigate to the nearest gas station",
    "what is the fastest route home",
    "is there heavy traffic on the highway",
    "find parking near the stadium",
    "book a flight to boston next week",
    "how much is a round trip to denver",
    "which gate does my flight board at",
    "has my flight been delayed",
    "i need a hotel room for two nights",
    "what is the score of the game",
    "when do the playoffs start",
    "which team won last night",
    "turn on the living room lights",
    "set the thermostat to seventy degrees",
    "lock the front door please",
    "order more paper towels",
    "track my package from yesterday",
    "what is the capital of australia",
    "how tall is the eiffel tower",
)

# composed of high-frequency in-domain words so the interjection itself is
# in vocabulary; only its placement is unusual
SEGMENT_TEXTS = (
    "oh sorry",
    "so sorry",
    "sorry about that",
    "oh i am sorry",
    "sorry never mind",
    "i am so sorry",
)


@dataclass(frozen=True)
class NoiseProfile:
    rate: float             # per-utterance probability of filler insertion
    min_words: int
    max_words: int
    unseen_frac: float = 0.0  # share of insertions drawn from the unseen bank


@dataclass(frozen=True)
class SynthConfig:
    n_train: int = 200
    n_dev: int = 50
    n_test: int = 100
    seed: int = 0
    train_noise: NoiseProfile = NoiseProfile(0.10, 1, 2)
    test_noise: NoiseProfile = NoiseProfile(0.45, 3, 5, unseen_frac=0.15)
    n_hard_train: int = 0
    reject_prob: float = 0.3
    greet_prob: float = 0.5


def _choice(rng: RngStream, options):
    return options[rng.integers(len(options))]


def _fill(template: str, slots: dict) -> str:
    return template.format(**slots)


def _noised(text: str, rng: RngStream, profile: NoiseProfile) -> str:
    if rng.random() >= profile.rate:
        return text
    words = text.split(" ")
    count = profile.min_words + rng.integers(profile.max_words - profile.min_words + 1)
    for _ in range(count):
        bank = (TEST_RARE_WORDS if rng.random() < profile.unseen_frac else RARE_WORDS)
        words.insert(rng.integers(len(words) + 1), _choice(rng, bank))
    return " ".join(words)


def _hard_opener(rng: RngStream) -> str:
    template = _choice(rng, HARD_OPENERS)
    out = []
    for word in template.split(" "):
        out.append(_choice(rng, RARE_WORDS) if word == "{r}" else word)
    return " ".join(out)


def _generate_dialog(dialog_id: str, rng: RngStream, cfg: SynthConfig,
                     noise: NoiseProfile, hard: bool = False) -> dict:
    values = {"area": _choice(rng, AREAS), "cuisine": _choice(rng, CUISINES),
              "price": _choice(rng, PRICES)}
    turns = []

    def add(text: str, action: str) -> None:
        turns.append({"user": _noised(text, rng, noise), "action": action})

    if not hard and rng.random() < cfg.greet_prob:
        add(_choice(rng, GREETINGS), ACTION_GREET)

    if hard:
        opener, mentioned = _hard_opener(rng), ()
    else:
        roll = rng.random()
        if roll < 0.20:
            opener, mentioned = _choice(rng, OPENERS_0), ()
        elif roll < 0.55:
            template = _choice(rng, OPENERS_1)
            opener = _fill(template, values)
            mentioned = tuple(s for s in SLOT_ORDER if "{" + s + "}" in template)
        elif roll < 0.92:
            template = _choice(rng, OPENERS_2)
            opener = _fill(template, values)
            mentioned = tuple(s for s in SLOT_ORDER if "{" + s + "}" in template)
        else:
            template = _choice(rng, OPENERS_3)
            opener = _fill(template, values)
            mentioned = SLOT_ORDER

    filled = set(mentioned)

    def policy_action() -> str:
        for slot in SLOT_ORDER:
            if slot not in filled:
                return REQUEST_ACTIONS[slot]
        return ACTION_API_CALL

    add(opener, policy_action())
    while len(filled) < len(SLOT_ORDER):
        slot = next(s for s in SLOT_ORDER if s not in filled)
        filled.add(slot)
        add(_fill(_choice(rng, ANSWERS[slot]), values), policy_action())
    add(_choice(rng, SHOW_REQUESTS), ACTION_OFFER)
    if rng.random() < cfg.reject_prob:
        add(_choice(rng, REJECTS), ACTION_OFFER_ALT)
    add(_choice(rng, ACCEPTS), ACTION_BYE)
    return {"id": dialog_id, "turns": turns}


def generate_records(cfg: SynthConfig) -> dict[str, list[dict]]:
    """Generate raw dialog records for the train/dev/test splits."""
    root = RngStream(cfg.seed)
    splits: dict[str, list[dict]] = {}
    for split, count, noise in (("train", cfg.n_train, cfg.train_noise),
                                ("dev", cfg.n_dev, cfg.train_noise),
                                ("test", cfg.n_test, cfg.test_noise)):
        records = []
        for i in range(count):
            dialog_id = f"{split}-{i:04d}"
            hard = split == "train" and i < cfg.n_hard_train
            records.append(_generate_dialog(dialog_id, root.derive(dialog_id), cfg,
                                            noise, hard=hard))
        splits[split] = records
    return splits


def write_corpus(out_dir, cfg: SynthConfig = SynthConfig()) -> dict[str, str]:
    """Write the corpus files plus pools and lexicon; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for split, records in generate_records(cfg).items():
        path = out_dir / f"{split}.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record, sort_keys=True))
                fh.write("\n")
        paths[split] = str(path)
    pool_path = out_dir / "ood_pool.txt"
    pool_path.write_text("\n".join(FOREIGN_UTTERANCES) + "\n", encoding="utf-8")
    paths["ood_pool"] = str(pool_path)
    segment_path = out_dir / "segment_pool.txt"
    segment_path.write_text("\n".join(SEGMENT_TEXTS) + "\n", encoding="utf-8")
    paths["segment_pool"] = str(segment_path)
    lexicon_path = out_dir / "lexicon.json"
    lexicon_path.write_text(json.dumps(SLOT_LEXICON, indent=2) + "\n", encoding="utf-8")
    paths["lexicon"] = str(lexicon_path)
    return paths
