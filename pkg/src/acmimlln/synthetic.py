"""Generated corpora with known answers, for overfit and key-instance recovery checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CorpusExample, KeyInstanceAnnotation, POLARITY_NAMES

LEXICON_ASPECTS = {
    "food": ("pizza", "pasta", "sushi", "dessert"),
    "service": ("waiter", "staff", "hostess", "service"),
    "price": ("price", "bill", "prices", "cost"),
}
LEXICON_OPINIONS = {
    "Pos": ("great", "delicious", "friendly", "fair"),
    "Neg": ("awful", "rude", "terrible", "overpriced"),
    "Neu": ("okay", "average", "standard", "usual"),
}


def lexicon_corpus(n: int = 20, seed: int = 0) -> list[CorpusExample]:
    """Short restaurant-style sentences pairing aspect words with opinion words.

    Each sentence mentions one or two categories as ``the <aspect> was <opinion>``
    clauses joined by ``but``; the opinion word's polarity is the label.
    """
    rng = np.random.default_rng(seed)
    cats = sorted(LEXICON_ASPECTS)
    out = []
    for i in range(n):
        k = 1 + int(rng.integers(2))
        chosen = [cats[j] for j in sorted(rng.choice(len(cats), size=k, replace=False))]
        clauses, labels = [], []
        for c in chosen:
            pol = POLARITY_NAMES[int(rng.integers(3))]
            aspect = LEXICON_ASPECTS[c][int(rng.integers(4))]
            opinion = LEXICON_OPINIONS[pol][int(rng.integers(4))]
            clauses.append(f"the {aspect} was {opinion}")
            labels.append((c, pol))
        text = " but ".join(clauses)
        out.append(CorpusExample(f"lex{i}", text, tuple(text.split()), tuple(labels)))
    return out


@dataclass
class KeyInstanceCorpus:
    train: list[CorpusExample]
    dev: list[CorpusExample]
    test: list[CorpusExample]
    test_annotations: list[KeyInstanceAnnotation]
    categories: list[str]
    triggers: dict[str, dict[str, str]]  # category -> trigger word -> polarity


def trigger_vocabulary(num_categories: int = 3, per_category: int = 10) -> dict[str, dict[str, str]]:
    """Disjoint trigger words per category; trigger k has polarity ``k mod 3``."""
    return {
        f"cat{c}": {f"c{c}w{k}": POLARITY_NAMES[k % 3] for k in range(per_category)}
        for c in range(num_categories)
    }


def key_instance_corpus(n_train: int = 2000, n_dev: int = 200, n_test: int = 200,
                        num_categories: int = 3, triggers_per_category: int = 10,
                        filler_size: int = 50, length: tuple[int, int] = (5, 10),
                        seed: int = 0) -> KeyInstanceCorpus:
    """Sentences of filler words with one trigger per mentioned category.

    Category polarity is the polarity of its trigger, and the trigger's
    position is the gold key instance.
    """
    rng = np.random.default_rng(seed)
    triggers = trigger_vocabulary(num_categories, triggers_per_category)
    categories = sorted(triggers)
    fillers = [f"f{i}" for i in range(filler_size)]

    def sentence(sid: str):
        k = 1 + int(rng.integers(min(3, num_categories)))
        chosen = [categories[j] for j in sorted(rng.choice(num_categories, size=k, replace=False))]
        n = int(rng.integers(max(length[0], k), length[1] + 1))
        tokens = [fillers[int(rng.integers(filler_size))] for _ in range(n)]
        positions = sorted(rng.choice(n, size=k, replace=False))
        rng.shuffle(positions)
        labels, annotations = [], []
        for c, pos in zip(chosen, positions):
            words = sorted(triggers[c])
            word = words[int(rng.integers(len(words)))]
            tokens[pos] = word
            labels.append((c, triggers[c][word]))
            annotations.append(KeyInstanceAnnotation(sid, c, ((int(pos), triggers[c][word]),)))
        return CorpusExample(sid, " ".join(tokens), tuple(tokens), tuple(labels)), annotations

    def split(prefix: str, size: int):
        examples, anns = [], []
        for i in range(size):
            ex, a = sentence(f"{prefix}{i}")
            examples.append(ex)
            anns.extend(a)
        return examples, anns

    train, _ = split("train", n_train)
    dev, _ = split("dev", n_dev)
    test, test_anns = split("test", n_test)
    return KeyInstanceCorpus(train, dev, test, test_anns, categories, triggers)


def gradcheck_problem(init_scale: float = 1.0, seed: int = 1):
    """A 4-token, 3-category model and a closure for its full training loss.

    Categories 0 and 2 are mentioned (gold Pos and Neg). Parameters are drawn
    uniform(-init_scale, init_scale) with pad rows zeroed: at the training
    initialisation the ReLU pre-activations sit within ~1e-6 of the kink,
    where central differences are meaningless.
    """
    from .model import ACMIMLLN, ModelConfig
    from .training import acd_loss, acsa_loss, combined_loss

    model = ACMIMLLN(ModelConfig(3, 10, dim=8, num_layers=2, dropout=0.0), np.random.default_rng(0))
    rng = np.random.default_rng(seed)
    for name, t in model.params.items():
        t.data = rng.uniform(-init_scale, init_scale, size=t.shape)
        if name.endswith("embedding.W"):
            t.data[0] = 0.0
    ids = np.array([[2, 5, 7, 3]])
    targets = np.array([[1.0, 0.0, 1.0]])
    gold = np.array([[2, -1, 0]])

    def loss():
        out = model.forward(ids)
        return combined_loss(acd_loss(out.detection, targets), acsa_loss(out.sentiment, gold, gold >= 0),
                             model.params, beta=1.0, l2=1e-5)

    return model, loss
