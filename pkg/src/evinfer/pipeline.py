"""Training and decoding for the two-stage identify-then-classify pipeline.

Both stages are softmax heads over encoder outputs: the identifier scores
every sentence of an article for evidence-bearingness (2 logits), the
classifier maps the selected evidence plus the ICO frame to one of the three
significance classes (3 logits). Heads train with mini-batch gradient
descent on cross-entropy; the best epoch by macro-F on a nested held-out
slice of the training prompts is kept. Everything is deterministic given
the seed.
"""

from __future__ import annotations

import base64
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import ANSWER_LABELS, Article, Corpus, ICOPrompt, Label, Split
from .encoding import Encoder, ICOFrame, encode_conditioned, encode_text
from .errors import EvinferError
from .metrics import EvalReport, build_report
from .sampling import Polarity, TrainingSample
from .segmentation import (
    Sentence,
    SentenceLabeling,
    SentenceSplitter,
    build_labelings,
    build_sentence_index,
)

_LABEL_TO_CLASS = {int(lbl): i for i, lbl in enumerate(ANSWER_LABELS)}


class InputMode(str, Enum):
    """What the evidence classifier consumes at train time."""

    GOLD_SENTENCE = "gold_sentence"
    GOLD_SPAN = "gold_span"
    ICO_ONLY = "ico_only"


class DiagnosticMode(str, Enum):
    END_TO_END = "end2end"
    ORACLE_SPAN = "oracle-span"
    ORACLE_SENTENCE = "oracle-sentence"
    ICO_ONLY = "ico-only"
    UNCONDITIONED = "unconditioned"


@dataclass(frozen=True)
class TrainConfig:
    """Shared training hyperparameters.

    ``learning_rate=None`` defers to the encoder's suggested rate (1e-2 for
    the hashing encoder's linear head, 2e-5 scale for contextual adapters).
    """

    epochs: int = 10
    learning_rate: float | None = None
    seed: int = 0
    batch_size: int = 32
    holdout_fraction: float = 0.10

    def __post_init__(self):
        if self.epochs < 1:
            raise EvinferError("MALFORMED_RECORD", f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise EvinferError("MALFORMED_RECORD", "learning_rate must be positive")

    def resolve_lr(self, encoder: Encoder) -> float:
        return self.learning_rate if self.learning_rate is not None else encoder.default_learning_rate

    def hash(self) -> str:
        payload = json.dumps(
            {
                "epochs": self.epochs,
                "learning_rate": self.learning_rate,
                "seed": self.seed,
                "batch_size": self.batch_size,
                "holdout_fraction": self.holdout_fraction,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def cross_entropy_and_grad(
    W: np.ndarray, b: np.ndarray, X: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy of a softmax head and its analytic gradients."""
    logits = X @ W.T + b
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = X.shape[0]
    loss = float(-np.mean(np.log(probs[np.arange(n), y])))
    grad_logits = probs.copy()
    grad_logits[np.arange(n), y] -= 1.0
    grad_logits /= n
    return loss, grad_logits.T @ X, grad_logits.sum(axis=0)


def _softmax_probs(W: np.ndarray, b: np.ndarray, X: np.ndarray) -> np.ndarray:
    logits = X @ W.T + b
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    return exp / exp.sum(axis=1, keepdims=True)


def _macro_f(gold: np.ndarray, pred: np.ndarray, n_classes: int) -> float:
    # Same zero convention as metrics.macro_prf, generalized to any class count.
    total = 0.0
    for c in range(n_classes):
        tp = int(np.sum((gold == c) & (pred == c)))
        predicted = int(np.sum(pred == c))
        actual = int(np.sum(gold == c))
        p = tp / predicted if predicted else 0.0
        r = tp / actual if actual else 0.0
        total += 2 * p * r / (p + r) if p + r else 0.0
    return total / n_classes


def _in_holdout(prompt_id: str, seed: int, fraction: float) -> bool:
    digest = hashlib.blake2b(f"{seed}:holdout:{prompt_id}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2**64 < fraction


def _train_head(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    lr: float,
    config: TrainConfig,
    X_val: np.ndarray,
    y_val: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, int, float]:
    """Mini-batch GD on cross-entropy; returns the best-epoch weights."""
    n, dim = X.shape
    W = np.zeros((n_classes, dim), dtype=np.float64)
    b = np.zeros(n_classes, dtype=np.float64)
    rng = np.random.default_rng(config.seed)
    best_W, best_b = W.copy(), b.copy()
    best_metric, best_epoch = -1.0, -1
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = perm[start : start + config.batch_size]
            _, gW, gb = cross_entropy_and_grad(W, b, X[batch], y[batch])
            W -= lr * gW
            b -= lr * gb
        pred = np.argmax(_softmax_probs(W, b, X_val), axis=1)
        metric = _macro_f(y_val, pred, n_classes)
        if metric > best_metric:
            best_W, best_b = W.copy(), b.copy()
            best_metric, best_epoch = metric, epoch
    return best_W, best_b, best_epoch, best_metric


@dataclass
class _Head:
    W: np.ndarray
    b: np.ndarray


@dataclass
class IdentifierModel:
    """Binary evidence scorer; score = softmax probability of the positive logit."""

    encoder_identity: str
    conditioned: bool
    head: _Head
    config_hash: str
    best_epoch: int = -1
    heldout_metric: float = float("nan")

    def score_sentences(
        self, encoder: Encoder, ico: ICOFrame, sentence_texts: Sequence[str]
    ) -> np.ndarray:
        self._check_encoder(encoder)
        X = np.stack(
            [
                encode_conditioned(encoder, ico, text, self.conditioned).concat()
                for text in sentence_texts
            ]
        )
        return _softmax_probs(self.head.W, self.head.b, X)[:, 1]

    def _check_encoder(self, encoder: Encoder) -> None:
        if encoder.identity != self.encoder_identity:
            raise EvinferError(
                "ENCODER_MISMATCH",
                f"model expects encoder {self.encoder_identity!r}, got {encoder.identity!r}",
            )


@dataclass
class ClassifierModel:
    """3-class evidence classifier over (optionally ICO-conditioned) evidence text."""

    encoder_identity: str
    conditioned: bool
    input_mode: InputMode
    head: _Head
    config_hash: str
    best_epoch: int = -1
    heldout_metric: float = float("nan")

    def class_probabilities(self, encoder: Encoder, ico: ICOFrame, text: str) -> np.ndarray:
        if encoder.identity != self.encoder_identity:
            raise EvinferError(
                "ENCODER_MISMATCH",
                f"model expects encoder {self.encoder_identity!r}, got {encoder.identity!r}",
            )
        if self.input_mode is InputMode.ICO_ONLY:
            x = encode_text(encoder, ico.render())
        else:
            x = encode_conditioned(encoder, ico, text, self.conditioned).concat()
        return _softmax_probs(self.head.W, self.head.b, x[None, :])[0]

    def predict(self, encoder: Encoder, ico: ICOFrame, text: str) -> tuple[Label, np.ndarray]:
        probs = self.class_probabilities(encoder, ico, text)
        return ANSWER_LABELS[int(np.argmax(probs))], probs


@dataclass(frozen=True)
class PipelinePrediction:
    prompt_id: str
    chosen_sentence_index: int
    identifier_score: float
    predicted_label: Label
    class_probabilities: tuple[float, float, float]


@dataclass
class ModelBundle:
    classifier: ClassifierModel
    identifier: IdentifierModel | None = None


def train_identifier(
    samples: Sequence[TrainingSample],
    corpus: Corpus,
    sentence_index: Mapping[str, Sequence[Sentence]],
    encoder: Encoder,
    config: TrainConfig,
    conditioned: bool,
) -> IdentifierModel:
    """Train the binary evidence identifier on POSITIVE/NEGATIVE samples."""
    if not samples:
        raise EvinferError("EMPTY_DATASET", "no identifier training samples")
    polarities = {s.polarity for s in samples}
    if len(polarities) < 2:
        raise EvinferError(
            "DEGENERATE_DATASET", f"identifier samples all {next(iter(polarities)).value}"
        )

    rows, labels, holdout_mask = [], [], []
    for s in samples:
        prompt = corpus.prompts[s.prompt_id]
        sentence = sentence_index[prompt.article_id][s.sentence_index]
        text = sentence.slice(corpus.articles[prompt.article_id].text)
        rows.append(
            encode_conditioned(encoder, ICOFrame.from_prompt(prompt), text, conditioned).concat()
        )
        labels.append(1 if s.polarity is Polarity.POSITIVE else 0)
        holdout_mask.append(_in_holdout(s.prompt_id, config.seed, config.holdout_fraction))
    X = np.stack(rows)
    y = np.array(labels, dtype=np.int64)
    mask = np.array(holdout_mask, dtype=bool)
    X_train, y_train = X[~mask], y[~mask]
    X_val, y_val = X[mask], y[mask]
    if X_train.shape[0] == 0 or len(set(y_train.tolist())) < 2:
        # Holdout carve-out swallowed a whole polarity; train on everything
        # and select on it too rather than failing.
        X_train, y_train, X_val, y_val = X, y, X, y
    elif X_val.shape[0] == 0:
        X_val, y_val = X_train, y_train

    W, b, best_epoch, best_metric = _train_head(
        X_train, y_train, 2, config.resolve_lr(encoder), config, X_val, y_val
    )
    return IdentifierModel(
        encoder_identity=encoder.identity,
        conditioned=conditioned,
        head=_Head(W, b),
        config_hash=config.hash(),
        best_epoch=best_epoch,
        heldout_metric=best_metric,
    )


def classifier_input_text(
    corpus: Corpus,
    prompt_id: str,
    sentence_index: Mapping[str, Sequence[Sentence]],
    input_mode: InputMode,
) -> str:
    """The classifier's text input for one prompt under the given mode.

    GOLD_SPAN takes the gold annotation's first span by position; GOLD_SENTENCE
    the first sentence that span overlaps. Both choices are fixed for
    reproducibility.
    """
    prompt = corpus.prompts[prompt_id]
    if input_mode is InputMode.ICO_ONLY:
        return ICOFrame.from_prompt(prompt).render()
    gold = corpus.gold_annotation(prompt_id)
    if not gold.spans:
        raise EvinferError("MISSING_GOLD_EVIDENCE", f"prompt {prompt_id} has no gold spans")
    span = min(gold.spans, key=lambda s: (s.char_start, s.char_end))
    text = corpus.articles[prompt.article_id].text
    if input_mode is InputMode.GOLD_SPAN:
        return text[span.char_start : span.char_end]
    sentences = sentence_index[prompt.article_id]
    for sent in sentences:
        if span.char_start < sent.char_end and sent.char_start < span.char_end:
            return sent.slice(text)
    raise EvinferError(
        "MISSING_GOLD_EVIDENCE", f"gold span of prompt {prompt_id} overlaps no sentence"
    )


def train_classifier(
    corpus: Corpus,
    sentence_index: Mapping[str, Sequence[Sentence]],
    encoder: Encoder,
    config: TrainConfig,
    conditioned: bool,
    input_mode: InputMode,
    prompt_ids: Sequence[str] | None = None,
) -> ClassifierModel:
    """Train the 3-class evidence classifier on training-split prompts."""
    if prompt_ids is None:
        prompt_ids = corpus.prompt_ids_in_split(Split.TRAIN)
    prompt_ids = [pid for pid in sorted(prompt_ids) if corpus.gold_label(pid).is_answer()]
    if not prompt_ids:
        raise EvinferError("EMPTY_DATASET", "no classifier training prompts")

    rows, labels, holdout_mask = [], [], []
    for pid in prompt_ids:
        prompt = corpus.prompts[pid]
        text = classifier_input_text(corpus, pid, sentence_index, input_mode)
        ico = ICOFrame.from_prompt(prompt)
        if input_mode is InputMode.ICO_ONLY:
            rows.append(encode_text(encoder, text))
        else:
            rows.append(encode_conditioned(encoder, ico, text, conditioned).concat())
        labels.append(_LABEL_TO_CLASS[int(corpus.gold_label(pid))])
        holdout_mask.append(_in_holdout(pid, config.seed, config.holdout_fraction))
    X = np.stack(rows)
    y = np.array(labels, dtype=np.int64)
    mask = np.array(holdout_mask, dtype=bool)
    X_train, y_train = X[~mask], y[~mask]
    X_val, y_val = X[mask], y[mask]
    if X_train.shape[0] == 0:
        X_train, y_train = X, y
    if X_val.shape[0] == 0:
        X_val, y_val = X_train, y_train

    W, b, best_epoch, best_metric = _train_head(
        X_train, y_train, 3, config.resolve_lr(encoder), config, X_val, y_val
    )
    return ClassifierModel(
        encoder_identity=encoder.identity,
        conditioned=conditioned if input_mode is not InputMode.ICO_ONLY else False,
        input_mode=input_mode,
        head=_Head(W, b),
        config_hash=config.hash(),
        best_epoch=best_epoch,
        heldout_metric=best_metric,
    )


def decode(
    identifier: IdentifierModel,
    classifier: ClassifierModel,
    prompt: ICOPrompt,
    sentences: Sequence[Sentence],
    article: Article,
    encoder: Encoder,
) -> PipelinePrediction:
    """Score every sentence, pick the argmax (ties to the lowest index),
    and classify the selected sentence."""
    if not sentences:
        raise EvinferError("NO_SENTENCES", f"no sentences for prompt {prompt.prompt_id}")
    if identifier.encoder_identity != classifier.encoder_identity:
        raise EvinferError(
            "ENCODER_MISMATCH",
            "identifier and classifier were trained with different encoders",
        )
    ico = ICOFrame.from_prompt(prompt)
    texts = [s.slice(article.text) for s in sentences]
    scores = identifier.score_sentences(encoder, ico, texts)
    best = int(np.argmax(scores))  # argmax returns the first (lowest) index on ties
    label, probs = classifier.predict(encoder, ico, texts[best])
    return PipelinePrediction(
        prompt_id=prompt.prompt_id,
        chosen_sentence_index=sentences[best].index,
        identifier_score=float(scores[best]),
        predicted_label=label,
        class_probabilities=(float(probs[0]), float(probs[1]), float(probs[2])),
    )


_MODE_INPUT = {
    DiagnosticMode.END_TO_END: InputMode.GOLD_SENTENCE,
    DiagnosticMode.UNCONDITIONED: InputMode.GOLD_SENTENCE,
    DiagnosticMode.ORACLE_SPAN: InputMode.GOLD_SPAN,
    DiagnosticMode.ORACLE_SENTENCE: InputMode.GOLD_SENTENCE,
    DiagnosticMode.ICO_ONLY: InputMode.ICO_ONLY,
}


def _check_mode(mode: DiagnosticMode, models: ModelBundle) -> None:
    expected = _MODE_INPUT[mode]
    if models.classifier.input_mode is not expected:
        raise EvinferError(
            "MODE_MODEL_MISMATCH",
            f"mode {mode.value} needs a classifier trained on {expected.value}, "
            f"got {models.classifier.input_mode.value}",
        )
    if mode in (DiagnosticMode.END_TO_END, DiagnosticMode.UNCONDITIONED):
        if models.identifier is None:
            raise EvinferError("MODE_MODEL_MISMATCH", f"mode {mode.value} needs an identifier")
        if mode is DiagnosticMode.UNCONDITIONED and (
            models.identifier.conditioned or models.classifier.conditioned
        ):
            raise EvinferError(
                "MODE_MODEL_MISMATCH", "unconditioned mode needs models trained unconditioned"
            )


def run_diagnostic(
    corpus: Corpus,
    mode: DiagnosticMode,
    models: ModelBundle,
    encoder: Encoder,
    split: Split = Split.TEST,
    segmenter: SentenceSplitter | None = None,
    workers: int = 1,
) -> EvalReport:
    """Evaluate one diagnostic mode over a split and assemble the report.

    Decoding parallelizes across prompts when ``workers > 1``; aggregation is
    keyed by prompt id, so the report does not depend on the worker count.
    """
    _check_mode(mode, models)
    if encoder.identity != models.classifier.encoder_identity:
        raise EvinferError(
            "ENCODER_MISMATCH",
            f"models expect encoder {models.classifier.encoder_identity!r}",
        )
    prompt_ids = [
        pid for pid in corpus.prompt_ids_in_split(split) if corpus.gold_label(pid).is_answer()
    ]
    if not prompt_ids:
        raise EvinferError("EMPTY_EVAL", f"no answerable prompts in split {split.value}")

    sentence_index = build_sentence_index(corpus, segmenter)
    gold_labels = {pid: int(corpus.gold_label(pid)) for pid in prompt_ids}

    if mode in (DiagnosticMode.END_TO_END, DiagnosticMode.UNCONDITIONED):
        labelings = build_labelings(corpus, sentence_index)
        identifier = models.identifier
        assert identifier is not None  # _check_mode guarantees it

        def run_one(pid: str):
            prompt = corpus.prompts[pid]
            article = corpus.articles[prompt.article_id]
            sentences = sentence_index[prompt.article_id]
            ico = ICOFrame.from_prompt(prompt)
            texts = [s.slice(article.text) for s in sentences]
            scores = identifier.score_sentences(encoder, ico, texts)
            best = int(np.argmax(scores))
            label, _ = models.classifier.predict(encoder, ico, texts[best])
            return pid, sentences[best].index, scores, int(label)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                raw = list(pool.map(run_one, prompt_ids))
        else:
            raw = [run_one(pid) for pid in prompt_ids]

        chosen: dict[str, int] = {}
        pred_labels: dict[str, int] = {}
        pos_scores: list[float] = []
        neg_scores: list[float] = []
        for pid, best_index, scores, label in sorted(raw, key=lambda item: item[0]):
            prompt = corpus.prompts[pid]
            chosen[pid] = best_index
            pred_labels[pid] = label
            evidence = labelings[pid].evidence_indices
            for sent, score in zip(sentence_index[prompt.article_id], scores):
                (pos_scores if sent.index in evidence else neg_scores).append(float(score))
        return build_report(
            gold_labels,
            pred_labels,
            chosen_indices=chosen,
            labelings=labelings,
            identifier_scores=(pos_scores, neg_scores),
        )

    # Classifier-only diagnostics: oracle evidence or the ICO frame alone.
    pred_labels = {}
    for pid in prompt_ids:
        prompt = corpus.prompts[pid]
        text = classifier_input_text(corpus, pid, sentence_index, _MODE_INPUT[mode])
        label, _ = models.classifier.predict(encoder, ICOFrame.from_prompt(prompt), text)
        pred_labels[pid] = int(label)
    return build_report(gold_labels, pred_labels)


# --- model persistence ---

_FORMAT_VERSION = 1


def _encode_array(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(data.tobytes()).decode("ascii")}


def _decode_array(payload: dict) -> np.ndarray:
    raw = base64.b64decode(payload["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(payload["shape"]).copy()


def save_model(model: IdentifierModel | ClassifierModel, path: str | Path) -> Path:
    """Write a model to the versioned JSON container (weights base64-embedded)."""
    record = {
        "format_version": _FORMAT_VERSION,
        "kind": "identifier" if isinstance(model, IdentifierModel) else "classifier",
        "encoder_identity": model.encoder_identity,
        "conditioned": model.conditioned,
        "config_hash": model.config_hash,
        "best_epoch": model.best_epoch,
        "heldout_metric": model.heldout_metric,
        "W": _encode_array(model.head.W),
        "b": _encode_array(model.head.b),
    }
    if isinstance(model, ClassifierModel):
        record["input_mode"] = model.input_mode.value
    path = Path(path)
    path.write_text(json.dumps(record, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_model(path: str | Path) -> IdentifierModel | ClassifierModel:
    path = Path(path)
    if not path.is_file():
        raise EvinferError("MISSING_FILE", f"model file not found: {path}")
    record = json.loads(path.read_text(encoding="utf-8"))
    if record.get("format_version") != _FORMAT_VERSION:
        raise EvinferError(
            "MALFORMED_RECORD", f"unsupported model format {record.get('format_version')!r}"
        )
    head = _Head(W=_decode_array(record["W"]), b=_decode_array(record["b"]))
    common = dict(
        encoder_identity=record["encoder_identity"],
        conditioned=record["conditioned"],
        head=head,
        config_hash=record["config_hash"],
        best_epoch=record["best_epoch"],
        heldout_metric=record["heldout_metric"],
    )
    if record["kind"] == "identifier":
        return IdentifierModel(**common)
    return ClassifierModel(input_mode=InputMode(record["input_mode"]), **common)
