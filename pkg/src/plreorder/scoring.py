"""Scoring contracts: prompt assembly, answer metrics, synthetic objectives.

A score function maps a permutation (plus a dataset of held-out examples) to
a value in [0, 1].  Two synthetic families make optimization measurable
without any network traffic:

- Mallows consensus: ``1 - K(pi, pi*) / C(n, 2)`` where ``K`` is the
  Kendall-tau distance to a hidden target ordering, so 1 means equal to the
  target and 0 means fully reversed.
- Bimodal consensus: the maximum of two Mallows scores with distinct
  targets, which rewards two well-separated modes at once.

For language-model scoring, ``assemble_prompt`` renders demonstrations in
permutation order between a fixed prefix and a query block; distinct
permutations of distinct demonstrations always yield distinct prompt bytes
because each demonstration block is a fixed template around its fields.
"""

from __future__ import annotations

import json
import math
import re
import string
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .distributions import Permutation, RandomSource


class ScoringError(RuntimeError):
    """A scorer failed permanently (for example, retries were exhausted)."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class ProtocolError(RuntimeError):
    """An endpoint replied with something other than a usable completion."""


@dataclass(frozen=True)
class Demonstration:
    """A worked example shown inside the prompt: an input and its answer."""

    input: str
    answer: str

    def __post_init__(self):
        if not self.input or not self.answer:
            raise ValueError("demonstration input and answer must be non-empty")


@dataclass(frozen=True)
class Example:
    """A held-out evaluation item: an input and its gold label."""

    input: str
    label: str

    def __post_init__(self):
        if not self.input or not self.label:
            raise ValueError("example input and label must be non-empty")


class ScoreFunction(Protocol):
    def evaluate(self, pi: Permutation, dataset: Sequence[Example]) -> float: ...


@dataclass(frozen=True)
class DataSplits:
    """Disjoint inner pool (for iteration scoring) and validation set."""

    inner_pool: tuple[Example, ...]
    validation: tuple[Example, ...]

    def __post_init__(self):
        inner = tuple(self.inner_pool)
        validation = tuple(self.validation)
        seen = {(e.input, e.label) for e in inner}
        overlap = [e for e in validation if (e.input, e.label) in seen]
        if overlap:
            raise ValueError(f"inner pool and validation overlap on {len(overlap)} examples")
        object.__setattr__(self, "inner_pool", inner)
        object.__setattr__(self, "validation", validation)

    @classmethod
    def from_pool(
        cls,
        examples: Sequence[Example],
        fraction: float = 0.8,
        budget: int | None = None,
        rng: RandomSource | None = None,
    ) -> "DataSplits":
        """Shuffle, optionally cap to ``budget``, and split into two parts.

        Duplicate (input, label) pairs are dropped first so the two sides
        stay disjoint.  Both sides are guaranteed non-empty.
        """
        if not 0.0 < fraction < 1.0:
            raise ValueError("fraction must lie strictly between 0 and 1")
        unique = list(dict.fromkeys(examples))
        if len(unique) < 2:
            raise ValueError("need at least two distinct examples to split")
        if rng is not None:
            order = rng.generator.permutation(len(unique))
            unique = [unique[i] for i in order]
        if budget is not None:
            if budget < 2:
                raise ValueError("budget must allow at least two examples")
            unique = unique[: min(budget, len(unique))]
        cut = int(round(fraction * len(unique)))
        cut = min(max(cut, 1), len(unique) - 1)
        return cls(tuple(unique[:cut]), tuple(unique[cut:]))


@dataclass(frozen=True)
class PromptTemplate:
    """Fixed text around demonstrations and the query.

    ``example_format`` must mention ``{input}`` and ``{answer}`` exactly
    once; ``query_format`` must mention ``{input}`` exactly once.
    Substitution is literal, so braces inside the data itself are safe.
    """

    prefix: str
    example_format: str
    separator: str
    query_format: str

    def __post_init__(self):
        if self.example_format.count("{input}") != 1:
            raise ValueError("example_format needs exactly one {input}")
        if self.example_format.count("{answer}") != 1:
            raise ValueError("example_format needs exactly one {answer}")
        if self.query_format.count("{input}") != 1:
            raise ValueError("query_format needs exactly one {input}")


DEFAULT_TEMPLATE = PromptTemplate(
    prefix="Answer each query with the answer only.",
    example_format="Input: {input}\nAnswer: {answer}",
    separator="\n\n",
    query_format="Input: {input}\nAnswer:",
)


def assemble_prompt(
    template: PromptTemplate,
    demonstrations: Sequence[Demonstration],
    pi: Permutation,
    query: str,
) -> str:
    """Render the prompt with demonstrations in the order given by ``pi``."""
    if len(demonstrations) != pi.n:
        raise ValueError(
            f"permutation over {pi.n} items cannot order {len(demonstrations)} demonstrations"
        )
    blocks = [template.prefix] if template.prefix else []
    for index in pi.order:
        demo = demonstrations[index]
        blocks.append(
            template.example_format.replace("{input}", demo.input).replace("{answer}", demo.answer)
        )
    blocks.append(template.query_format.replace("{input}", query))
    return template.separator.join(blocks)


def kendall_tau_distance(a: Permutation, b: Permutation) -> int:
    """Number of item pairs ordered oppositely by the two permutations."""
    if a.n != b.n:
        raise ValueError("permutations must cover the same items")
    ra = a.ranks()
    rb = b.ranks()
    before_a = ra[:, None] < ra[None, :]
    before_b = rb[:, None] < rb[None, :]
    return int(np.sum(np.triu(before_a != before_b, k=1)))


def mallows_score(pi: Permutation, target: Permutation) -> float:
    """``1 - K(pi, target) / C(n, 2)``: 1 at the target, 0 at its reverse."""
    if pi.n != target.n:
        raise ValueError("permutations must cover the same items")
    pairs = pi.n * (pi.n - 1) // 2
    if pairs == 0:
        # A single item has no pair to disagree on.
        return 1.0
    return 1.0 - kendall_tau_distance(pi, target) / pairs


def bimodal_score(pi: Permutation, target_a: Permutation, target_b: Permutation) -> float:
    """Maximum agreement with either of two target orderings."""
    return max(mallows_score(pi, target_a), mallows_score(pi, target_b))


@dataclass(frozen=True)
class MallowsScorer:
    """Score function peaked at a hidden target ordering; ignores the dataset."""

    target: Permutation

    def evaluate(self, pi: Permutation, dataset: Sequence[Example]) -> float:
        return mallows_score(pi, self.target)


@dataclass(frozen=True)
class BimodalScorer:
    """Score function with two separated modes; ignores the dataset."""

    target_a: Permutation
    target_b: Permutation

    def evaluate(self, pi: Permutation, dataset: Sequence[Example]) -> float:
        return bimodal_score(pi, self.target_a, self.target_b)


def _normalize_answer(text: str) -> str:
    return text.strip().casefold().rstrip(string.punctuation + " ")


def exact_match_metric(prediction: str, gold: str) -> int:
    """1 if the texts match after trimming, casefolding, and dropping
    trailing punctuation; 0 otherwise."""
    return int(_normalize_answer(prediction) == _normalize_answer(gold))


# Last number in the text: optional sign, optional thousands separators,
# optional decimal part.
_NUMBER_PATTERN = re.compile(r"[-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?")


def numeric_answer_metric(prediction: str, gold: str) -> int:
    """1 if the last number in ``prediction`` equals the gold value.

    The gold label must itself parse as a number; comparison uses a relative
    tolerance of 1e-6.  A prediction without any number scores 0.
    """
    gold_value = float(gold.replace(",", ""))
    found = _NUMBER_PATTERN.findall(prediction)
    if not found:
        return 0
    value = float(found[-1].replace(",", ""))
    return int(math.isclose(value, gold_value, rel_tol=1e-6, abs_tol=0.0))


Metric = Callable[[str, str], int]

METRICS: dict[str, Metric] = {
    "exact-match": exact_match_metric,
    "numeric": numeric_answer_metric,
}


def load_examples_jsonl(path) -> list[Example]:
    """Read a line-delimited JSON dataset with string fields input and label."""
    examples = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {err}") from err
            if not isinstance(record, dict) or "input" not in record or "label" not in record:
                raise ValueError(f"{path}:{lineno}: expected object with input and label")
            if not isinstance(record["input"], str) or not isinstance(record["label"], str):
                raise ValueError(f"{path}:{lineno}: input and label must be strings")
            examples.append(Example(record["input"], record["label"]))
    if not examples:
        raise ValueError(f"{path}: no examples found")
    return examples


def load_demonstrations_jsonl(path) -> list[Demonstration]:
    """Read demonstrations from the same wire format as datasets."""
    return [Demonstration(e.input, e.label) for e in load_examples_jsonl(path)]
