"""Training-data extraction from stored proofs.

Replays every provable proposition's proof into a tree, records one proof
step per proved goal, and emits three newline-delimited JSON datasets:

* ``relevance``: goal state, the viable candidate theorems, and which one
  the proof actually applied;
* ``generative``: steps whose theorem has at least one unconstrained
  variable, with the substitution trees the proof chose for them;
* ``payoff``: proved expressions as positives, plus negatives drawn from
  the hypotheses of the top guidance-predicted theorem applications that
  do not coincide with any positive.

Records mirror the shapes of the remote guidance protocol: token-id
sequences with 4-feature vectors under a per-record dummy renaming, with
the variable-to-token mapping and variable typecodes stored alongside so a
training loader can re-draw the renaming each epoch.  Splits are assigned
per proposition, and every file is byte-deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path

from mmprover.database import Database, MMError, decompress_proof
from mmprover.grammar import (
    Grammar,
    ParseTree,
    TokenVocabulary,
    build_grammar,
    build_vocabulary,
    make_renaming,
    tokenize,
)
from mmprover.guidance import BaselineGuidance, GuidanceModel, unconstrained_variables
from mmprover.unify import (
    Context,
    Substitution,
    TheoremIndex,
    apply_substitution,
    make_context,
    match_assertion,
    viable_theorems,
)
from mmprover.verifier import ProofTree, tree_from_rpn

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")

# Stable per-file seed offsets so each output file draws its renamings from
# an independent, reproducible stream.
_KIND_IDS = {"relevance": 1, "generative": 2, "payoff": 3}
_SPLIT_IDS = {"train": 1, "validation": 2, "test": 3}


@dataclass(frozen=True)
class ProofStep:
    """One proved goal inside a stored proof."""

    context: str          # proposition whose proof contains this step
    split: str
    expression: ParseTree  # the goal proved at this node
    theorem: str          # assertion applied at this node
    subst: Substitution   # full substitution of the theorem's variables
    index: int            # pre-order position within the context's proof


@dataclass(frozen=True)
class PayoffExample:
    context: str
    split: str
    expression: ParseTree
    positive: bool


@dataclass(frozen=True)
class DatasetConfig:
    seed: int = 0
    train_fraction: float = 0.8
    validation_fraction: float = 0.1
    payoff_top: int = 2           # predicted pairs per step used for negatives
    guidance_name: str = "baseline"


def split_propositions(db: Database, seed: int,
                       train_fraction: float = 0.8,
                       validation_fraction: float = 0.1) -> dict[str, tuple[str, ...]]:
    """Assign every provable proposition to train/validation/test.

    The draw is a seeded uniform shuffle; within each split, labels keep
    database order.
    """
    labels = [st.label for st in db.propositions()
              if st.typecode == db.provable_typecode]
    order = {label: i for i, label in enumerate(labels)}
    rng = random.Random(seed)
    shuffled = labels[:]
    rng.shuffle(shuffled)
    n = len(shuffled)
    n_train = int(n * train_fraction)
    n_valid = int(n * validation_fraction)
    parts = {
        "train": shuffled[:n_train],
        "validation": shuffled[n_train:n_train + n_valid],
        "test": shuffled[n_train + n_valid:],
    }
    return {split: tuple(sorted(part, key=order.__getitem__))
            for split, part in parts.items()}


def extract_steps(db: Database, splits: dict[str, tuple[str, ...]],
                  grammar: Grammar, index: TheoremIndex,
                  contexts: dict[str, Context] | None = None,
                  ) -> tuple[list[ProofStep], list[tuple[str, str]]]:
    """Replay stored proofs into per-goal proof steps.

    Returns (steps, skipped); a proposition whose proof cannot be replayed
    is skipped with a logged warning and lands in the second list.
    """
    split_of = {label: split for split, part in splits.items()
                for label in part}
    steps: list[ProofStep] = []
    skipped: list[tuple[str, str]] = []
    for prop in db.propositions():
        split = split_of.get(prop.label)
        if split is None:
            continue
        try:
            ctx = make_context(prop, db, grammar)
            if contexts is not None:
                contexts[prop.label] = ctx
            tree = tree_from_rpn(prop, decompress_proof(prop, db), db,
                                 grammar, index, ctx)
        except MMError as exc:
            log.warning("skipping %s: %s", prop.label, exc)
            skipped.append((prop.label, str(exc)))
            continue
        if not isinstance(tree, ProofTree):
            continue
        for i, node in enumerate(tree.walk()):
            if node.is_hyp:
                continue
            steps.append(ProofStep(prop.label, split, node.expr,
                                   node.rule, node.subst, i))
    return steps, skipped


def make_payoff_examples(steps: list[ProofStep], guidance: GuidanceModel,
                         index: TheoremIndex, contexts: dict[str, Context],
                         vocab: TokenVocabulary, top: int = 2,
                         ) -> list[PayoffExample]:
    """Positive examples from proof steps, negatives from predicted steps.

    For each step, the guidance model's ``top`` best (theorem, substitution)
    pairs are predicted; the provable hypotheses those applications would
    open become negative examples unless expression-equal to some positive
    of the same split.  Guidance failures skip the step.
    """
    def key_of(expr: ParseTree) -> tuple[int, ...]:
        renaming = make_renaming(expr.variables(), vocab, None)
        return tuple(tokenize([[expr]], renaming, vocab).tokens)

    positives: dict[str, dict[tuple[int, ...], PayoffExample]] = \
        {split: {} for split in SPLITS}
    for step in steps:
        key = key_of(step.expression)
        positives[step.split].setdefault(
            key, PayoffExample(step.context, step.split, step.expression, True))

    negatives: dict[str, dict[tuple[int, ...], PayoffExample]] = \
        {split: {} for split in SPLITS}
    for step in steps:
        ctx = contexts[step.context]
        candidates = viable_theorems(step.expression, ctx, index)
        if not candidates:
            continue
        try:
            scores = guidance.relevance(ctx, step.expression, candidates)
        except MMError:
            continue
        ranked = sorted(range(len(candidates)),
                        key=lambda i: (-scores[i], i))[:top]
        for i in ranked:
            info, constrained = candidates[i]
            if not any(info.e_provable):
                continue
            try:
                generated = guidance.generate(ctx, step.expression, info,
                                              constrained, limit=1)
            except MMError:
                continue
            if not generated:
                continue
            subst = generated[0][0]
            for hyp, provable in zip(info.e_hyps, info.e_provable):
                if not provable:
                    continue
                expr = apply_substitution(hyp, subst)
                key = key_of(expr)
                if key in positives[step.split]:
                    continue
                negatives[step.split].setdefault(
                    key, PayoffExample(step.context, step.split, expr, False))

    out: list[PayoffExample] = []
    for split in SPLITS:
        out.extend(positives[split].values())
        out.extend(negatives[split].values())
    return out


# ----------------------------------------------------------------------
# Tokenized emission


def _state_record(ctx: Context, expr: ParseTree, vocab: TokenVocabulary,
                  rng, extra_trees: tuple[ParseTree, ...] = ()) -> dict:
    """Tokenize hypotheses + expression under a fresh renaming.

    Returns the record skeleton with state, renaming and typecode fields;
    ``extra_trees`` join the renaming (for substitution images) without
    entering the state itself.
    """
    variables: dict[str, str] = {}
    for tree in ctx.e_hyps + (expr,) + extra_trees:
        variables.update(tree.variables())
    renaming = make_renaming(variables, vocab, rng)
    state = tokenize([list(ctx.e_hyps), [expr]], renaming, vocab)
    return {
        "context": ctx.label,
        "state": {"tokens": state.tokens, "features": state.features},
        "renaming": renaming,
        "typecodes": variables,
    }


def _relevance_record(step: ProofStep, ctx: Context, index: TheoremIndex,
                      vocab: TokenVocabulary, rng) -> dict | None:
    candidates = viable_theorems(step.expression, ctx, index)
    labels = [info.label for info, _c in candidates]
    try:
        target = labels.index(step.theorem)
    except ValueError:
        log.warning("step %s/%d: applied theorem %s not viable; dropped",
                    step.context, step.index, step.theorem)
        return None
    record = _state_record(ctx, step.expression, vocab, rng)
    record["candidates"] = labels
    record["target"] = step.theorem
    record["target_index"] = target
    return record


def _generative_record(step: ProofStep, ctx: Context, index: TheoremIndex,
                       vocab: TokenVocabulary, rng) -> dict | None:
    info = index.by_label.get(step.theorem)
    if info is None:
        return None
    constrained = match_assertion(info.assertion, step.expression)
    if constrained is None:
        return None
    unconstrained = unconstrained_variables(info, constrained)
    if not unconstrained:
        return None
    images = tuple(constrained.values()) + \
        tuple(step.subst[v] for v, _tc in unconstrained)
    record = _state_record(ctx, step.expression, vocab, rng,
                           extra_trees=images)
    renaming = record["renaming"]
    record["theorem"] = step.theorem
    record["constrained"] = {
        var: tokenize([[tree]], renaming, vocab).tokens
        for var, tree in sorted(constrained.items())
    }
    record["unconstrained"] = [{"var": v, "typecode": tc}
                               for v, tc in unconstrained]
    record["targets"] = [
        tokenize([[step.subst[v]]], renaming, vocab).tokens
        for v, _tc in unconstrained
    ]
    return record


def _payoff_record(example: PayoffExample, ctx: Context,
                   vocab: TokenVocabulary, rng) -> dict:
    record = _state_record(ctx, example.expression, vocab, rng)
    record["label"] = 1 if example.positive else 0
    return record


def _write_jsonl(path: Path, records) -> int:
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True,
                                separators=(",", ":")))
            fh.write("\n")
            count += 1
    return count


def _file_rng(seed: int, kind: str, split: str) -> random.Random:
    return random.Random(seed * 1_000_003
                         + _KIND_IDS[kind] * 101 + _SPLIT_IDS[split])


def emit_theorems(db: Database, grammar: Grammar, vocab: TokenVocabulary,
                  splits: dict[str, tuple[str, ...]], out_dir: Path) -> int:
    """Write every provable assertion's canonical encoding."""
    split_of = {label: split for split, part in splits.items()
                for label in part}

    def records():
        for st in db.provable_assertions():
            ctx = make_context(st, db, grammar)
            variables: dict[str, str] = {}
            for tree in ctx.e_hyps + (ctx.goal,):
                variables.update(tree.variables())
            renaming = make_renaming(variables, vocab, None)
            state = tokenize([list(ctx.e_hyps), [ctx.goal]], renaming, vocab)
            yield {
                "label": st.label,
                "kind": st.kind,
                "db_position": st.pos,
                "split": split_of.get(st.label),
                "state": {"tokens": state.tokens, "features": state.features},
                "renaming": renaming,
                "typecodes": variables,
            }

    return _write_jsonl(out_dir / "theorems.jsonl", records())


def extract_datasets(db: Database, out_dir: Path | str,
                     config: DatasetConfig = DatasetConfig(),
                     guidance: GuidanceModel | None = None,
                     grammar: Grammar | None = None,
                     index: TheoremIndex | None = None,
                     vocab: TokenVocabulary | None = None,
                     snapshot_hash: str | None = None) -> dict:
    """Run the whole pipeline and return the manifest (also written to disk)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grammar = grammar or build_grammar(db)
    index = index or TheoremIndex(db, grammar)
    vocab = vocab or build_vocabulary(db, grammar)
    guidance = guidance or BaselineGuidance(db)

    splits = split_propositions(db, config.seed, config.train_fraction,
                                config.validation_fraction)
    contexts: dict[str, Context] = {}
    steps, skipped = extract_steps(db, splits, grammar, index, contexts)
    payoff = make_payoff_examples(steps, guidance, index, contexts, vocab,
                                  top=config.payoff_top)

    counts: dict[str, dict[str, int]] = {
        "steps": {split: 0 for split in SPLITS},
        "relevance": {split: 0 for split in SPLITS},
        "generative": {split: 0 for split in SPLITS},
        "payoff_positive": {split: 0 for split in SPLITS},
        "payoff_negative": {split: 0 for split in SPLITS},
    }
    for step in steps:
        counts["steps"][step.split] += 1

    files: dict[str, int] = {}
    for split in SPLITS:
        split_steps = [s for s in steps if s.split == split]

        rng = _file_rng(config.seed, "relevance", split)
        records = filter(None, (_relevance_record(s, contexts[s.context],
                                                  index, vocab, rng)
                                for s in split_steps))
        name = f"relevance.{split}.jsonl"
        files[name] = _write_jsonl(out_dir / name, records)
        counts["relevance"][split] = files[name]

        rng = _file_rng(config.seed, "generative", split)
        records = filter(None, (_generative_record(s, contexts[s.context],
                                                   index, vocab, rng)
                                for s in split_steps))
        name = f"generative.{split}.jsonl"
        files[name] = _write_jsonl(out_dir / name, records)
        counts["generative"][split] = files[name]

        rng = _file_rng(config.seed, "payoff", split)
        split_payoff = [e for e in payoff if e.split == split]
        records = (_payoff_record(e, contexts[e.context], vocab, rng)
                   for e in split_payoff)
        name = f"payoff.{split}.jsonl"
        files[name] = _write_jsonl(out_dir / name, records)
        for example in split_payoff:
            bucket = "payoff_positive" if example.positive else "payoff_negative"
            counts[bucket][split] += 1

    files["theorems.jsonl"] = emit_theorems(db, grammar, vocab, splits,
                                            out_dir)

    # Shared with the model service: the flat form is what the handshake
    # hash covers, the JSON form carries kinds/arities/typecodes for the
    # service's token filters.
    (out_dir / "vocabulary.txt").write_text(vocab.serialize(),
                                            encoding="utf-8")
    files["vocabulary.txt"] = len(vocab)
    (out_dir / "vocabulary.json").write_text(
        json.dumps(vocab.metadata(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")

    manifest = {
        "seed": config.seed,
        "snapshot_sha256": snapshot_hash,
        "vocabulary_sha256": vocab.sha256(),
        "payoff_guidance": config.guidance_name,
        "payoff_top": config.payoff_top,
        "splits": {split: len(splits[split]) for split in SPLITS},
        "split_labels": {split: list(splits[split]) for split in SPLITS},
        "counts": counts,
        "skipped": skipped,
        "files": files,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    return manifest
