"""Negative-supervision construction: error identification, corrective
conversations, balancing, assembly, and interchange formats."""

import numpy as np
import pytest

from prefalign import world
from prefalign.constructor import (
    CodebookCategory,
    ErrorCodebook,
    RuleBasedOracle,
    assemble_nsft_sample,
    balance_yes_no,
    construct_conversation,
    conversation_to_llava_record,
    identify_errors,
    load_default_codebook,
    ocrvqa_pairs,
    qa_turns_from_clauses,
    read_llava_jsonl,
    write_llava_jsonl,
)
from prefalign.data import Conversation, Turn
from prefalign.losses import conversation_sft_loss, nsft_loss
from prefalign.model import init_params
from prefalign.world import (
    CAT_COLOR,
    CAT_COUNT,
    CAT_FABRICATION,
    CAT_OMISSION,
    CAT_OBJECT_SWAP,
    COLORS,
    COUNT_WORDS,
    OBJECTS,
    Scene,
    SceneObject,
    render_caption,
)

_YES = world.TOKEN_TO_ID["yes"]
_NO = world.TOKEN_TO_ID["no"]


def _codebook():
    return load_default_codebook()


def test_default_codebook_covers_corruption_categories():
    assert _codebook().names() == set(world.CORRUPTION_CATEGORIES)


def test_codebook_validation():
    with pytest.raises(ValueError):
        ErrorCodebook(categories=[])
    cat = CodebookCategory("x", "instance", "dup")
    with pytest.raises(ValueError):
        ErrorCodebook(categories=[cat, cat])


def test_identify_errors_empty_for_identical_captions():
    s = world.generate_scene(0)
    caption = render_caption(s)
    assert identify_errors(RuleBasedOracle(), caption, caption, _codebook()) == []


def test_identify_errors_color_swap_span():
    s = Scene([SceneObject(2, 1, 2)])  # two blue cup
    caption = render_caption(s)
    rejected = render_caption(Scene([SceneObject(2, 4, 2)]))  # color swapped
    errors = identify_errors(RuleBasedOracle(), rejected, caption, _codebook())
    assert len(errors) == 1
    err = errors[0]
    assert err.category == CAT_COLOR
    assert err.span == (1, 2)  # the color token of clause 0
    assert rejected[err.span[0]:err.span[1]] == [world.words_to_tokens([COLORS[4]])[0]]
    assert err.correction == (2, 1, 2)


def test_identify_errors_spans_within_bounds():
    oracle = RuleBasedOracle()
    codebook = _codebook()
    for rec in world.make_preference_dataset(200, 11):
        for err in identify_errors(oracle, rec.rejected, rec.chosen, codebook):
            lo, hi = err.span
            assert 0 <= lo <= hi <= len(rec.rejected)


def test_identify_errors_perfect_on_double_corruptions():
    oracle = RuleBasedOracle()
    codebook = _codebook()
    seen_double = 0
    for rec in world.make_preference_dataset(300, 2):
        if len(rec.corruptions) != 2:
            continue
        seen_double += 1
        errors = identify_errors(oracle, rec.rejected, rec.chosen, codebook)
        got = sorted((e.category, e.correction if e.correction else e.wrong_value) for e in errors)
        want = sorted((c.category, c.original if c.original else c.replacement)
                      for c in rec.corruptions)
        assert got == want
    assert seen_double > 20


def _answer_words(turn):
    return world.tokens_to_words([t for t in turn.answer if t != world.EOS_ID])


def test_construct_conversation_zero_errors_gives_k_gt_turns():
    s = world.generate_scene(4)
    conv = construct_conversation([], render_caption(s), s, k=5)
    assert len(conv.turns) == 5
    assert conv.provenance == "constructed"
    _assert_consistent_with_scene(conv, s)


def test_construct_conversation_fabrication_yields_no_answer():
    s = Scene([SceneObject(0, 0, 1)])  # one red cat
    fabricated = Scene([SceneObject(0, 0, 1), SceneObject(1, 2, 2)])  # adds dog
    caption = render_caption(s)
    rejected = render_caption(fabricated)
    errors = identify_errors(RuleBasedOracle(), rejected, caption, _codebook())
    conv = construct_conversation(errors, caption, s, k=5)
    q = world.words_to_tokens(["is", "there", "a", "dog", "?"])
    corrective = [t for t in conv.turns if t.question == q]
    assert len(corrective) == 1
    assert _answer_words(corrective[0]) == ["no"]


def test_construct_conversation_color_swap_asserts_correct_color():
    s = Scene([SceneObject(3, 0, 2)])  # two red hat
    caption = render_caption(s)
    rejected = render_caption(Scene([SceneObject(3, 1, 2)]))  # blue instead
    errors = identify_errors(RuleBasedOracle(), rejected, caption, _codebook())
    conv = construct_conversation(errors, caption, s, k=3)
    q = world.words_to_tokens(["what", "color", "is", "the", "hat", "?"])
    corrective = [t for t in conv.turns if t.question == q]
    assert corrective and _answer_words(corrective[0]) == ["red"]


def _assert_consistent_with_scene(conv, scene):
    """Every answer must agree with the scene (and hence with y_c)."""
    by_obj = {o.obj: o for o in scene.objects}
    for turn in conv.turns:
        words = world.tokens_to_words(turn.question)
        answer = _answer_words(turn)
        if words[:3] == ["is", "there", "a"]:
            obj = OBJECTS.index(words[3])
            assert answer == (["yes"] if obj in by_obj else ["no"])
        elif words[:2] == ["what", "color"]:
            obj = OBJECTS.index(words[4])
            assert answer == [COLORS[by_obj[obj].color]]
        elif words[:2] == ["how", "many"]:
            obj = OBJECTS.index(words[2])
            assert answer == [COUNT_WORDS[by_obj[obj].count - 1]]
        else:
            raise AssertionError(f"unexpected question template: {words}")


def test_constructed_answers_never_contradict_chosen():
    oracle = RuleBasedOracle()
    codebook = _codebook()
    for rec in world.make_preference_dataset(200, 8):
        # corrections about fabricated/swapped-in objects answer "no" about
        # objects absent from the scene, which the checker also covers
        errors = identify_errors(oracle, rec.rejected, rec.chosen, codebook)
        conv = construct_conversation(errors, rec.chosen, rec.scene, k=5)
        _assert_consistent_with_scene(conv, rec.scene)


def test_construct_conversation_rejects_bad_k():
    s = world.generate_scene(1)
    with pytest.raises(ValueError):
        construct_conversation([], render_caption(s), s, k=0)


def test_ocrvqa_pairs_verbatim_example():
    assert ocrvqa_pairs("recipe", "travel") == [
        ("Is this a travel book?", "Yes"),
        ("Is this a recipe book?", "No"),
    ]


def test_ocrvqa_pairs_symmetric_swap():
    fwd = ocrvqa_pairs("recipe", "travel")
    rev = ocrvqa_pairs("travel", "recipe")
    assert rev == [("Is this a recipe book?", "Yes"), ("Is this a travel book?", "No")]
    assert {a for _, a in fwd} == {"Yes", "No"} and len(fwd) == 2


def test_ocrvqa_pairs_rejects_identical_answers():
    with pytest.raises(ValueError):
        ocrvqa_pairs("travel", "travel")


def _yes_no_conversation(n_yes, n_no):
    turns = [Turn(world.words_to_tokens(["is", "there", "a", "cat", "?"]),
                  [_YES, world.EOS_ID]) for _ in range(n_yes)]
    turns += [Turn(world.words_to_tokens(["is", "there", "a", "dog", "?"]),
                   [_NO, world.EOS_ID]) for _ in range(n_no)]
    return Conversation(np.zeros(world.latent_dim()), turns, provenance="constructed")


def _yes_fraction(conv):
    yn = [t for t in conv.turns if t.answer[0] in (_YES, _NO)]
    return sum(1 for t in yn if t.answer[0] == _YES) / len(yn)


def test_balance_yes_no_all_yes_unchanged():
    conv = _yes_no_conversation(4, 0)
    out = balance_yes_no(conv, 0.4, 0.6, seed=0)
    assert len(out.turns) == 4


def test_balance_yes_no_reaches_band():
    conv = _yes_no_conversation(1, 9)
    out = balance_yes_no(conv, 0.4, 0.6, seed=0)
    n_no = sum(1 for t in out.turns if t.answer[0] == _NO)
    assert 1 <= n_no <= 2
    assert 0.4 <= _yes_fraction(out) <= 0.6


def test_balance_yes_no_deterministic():
    conv = _yes_no_conversation(2, 8)
    a = balance_yes_no(conv, 0.4, 0.6, seed=7)
    b = balance_yes_no(conv, 0.4, 0.6, seed=7)
    assert [(t.question, t.answer) for t in a.turns] == [(t.question, t.answer) for t in b.turns]


def test_balance_yes_no_never_removes_yes_or_non_yes_no_turns():
    conv = _yes_no_conversation(2, 6)
    color_q = Turn(world.words_to_tokens(["what", "color", "is", "the", "cat", "?"]),
                   world.words_to_tokens(["red"]) + [world.EOS_ID])
    conv.turns.append(color_q)
    out = balance_yes_no(conv, 0.4, 0.6, seed=3)
    assert sum(1 for t in out.turns if t.answer[0] == _YES) == 2
    assert any(t.question == color_q.question for t in out.turns)


def test_balance_yes_no_validates_band():
    conv = _yes_no_conversation(1, 1)
    with pytest.raises(ValueError):
        balance_yes_no(conv, 0.8, 0.2, seed=0)


def test_assemble_append_mode():
    s = world.generate_scene(2)
    gt = Conversation(world.featurize(s),
                      [Turn(list(world.CAPTION_QUESTION), list(render_caption(s)))])
    constructed = construct_conversation([], render_caption(s), s, k=3)
    merged = assemble_nsft_sample(gt, constructed, "append")
    assert len(merged.turns) == 1 + 3
    assert merged.provenance == "appended"
    unchanged = assemble_nsft_sample(gt, None, "append")
    assert len(unchanged.turns) == len(gt.turns)


def test_assemble_concat_separate_feeds_nsft_loss():
    s = world.generate_scene(3)
    gt = Conversation(world.featurize(s),
                      [Turn(list(world.CAPTION_QUESTION), list(render_caption(s)))])
    constructed = construct_conversation([], render_caption(s), s, k=2)
    pair = assemble_nsft_sample(gt, constructed, "concat_separate")
    assert pair == (gt, constructed)
    params = init_params(world.VOCAB_SIZE, 8, world.latent_dim(), n_blocks=1, seed=0)
    total = nsft_loss(params, *pair).item()
    parts = conversation_sft_loss(params, gt).item() + conversation_sft_loss(params, constructed).item()
    assert total == pytest.approx(parts, abs=1e-12)


def test_assemble_rejects_unknown_mode():
    s = world.generate_scene(2)
    gt = Conversation(world.featurize(s), [Turn([0], [1])])
    with pytest.raises(ValueError):
        assemble_nsft_sample(gt, None, "zip")


def test_qa_turns_from_clauses_consistent():
    s = world.generate_scene(6)
    rng = np.random.default_rng(0)
    turns = qa_turns_from_clauses(list(s.objects), rng, 20)
    conv = Conversation(world.featurize(s), turns)
    _assert_consistent_with_scene(conv, s)


def test_llava_jsonl_round_trip(tmp_path):
    s = world.generate_scene(9)
    conv = construct_conversation([], render_caption(s), s, k=2)
    rec = conversation_to_llava_record(conv, "scene-9", "seed://9")
    assert [c["from"] for c in rec["conversations"]] == ["human", "gpt"] * 2
    path = tmp_path / "convs.jsonl"
    write_llava_jsonl([rec], path)
    assert read_llava_jsonl(path) == [rec]
