import json

import pytest

from claimlens.classify import (
    ModelSpec,
    RunCell,
    build_context,
    build_prompt,
    classify_cell,
    classify_instance,
    experiment_cells,
    parse_label,
    run_suite,
)
from claimlens.errors import ConfigError, MissingArticleBody, ParseFailure
from claimlens.gateway import LlmGateway, ScriptedBackend, export_finetune_file
from claimlens.model import (
    ContextConfig,
    DatasetInstance,
    LearningMode,
    Split,
    load_predictions,
)


def _instance(
    i=0,
    body=(
        "Opening line of the article. Speaking at an event, Jo Bloggs said "
        "migration levels are 'too high'. Business groups disagreed strongly. "
        "A final line closes the piece."
    ),
    description="Jo Bloggs (MP). They has worked as a politician.",
    label=True,
):
    return DatasetInstance(
        instance_id=f"inst{i:04d}",
        claim_id=f"claim{i:04d}",
        utterance="Migration levels are 'too high'.",
        article_url="https://news.example/x",
        article_body=body,
        actor_name="Jo Bloggs",
        actor_description=description,
        viewpoint_id=(i % 9) + 1,
        viewpoint_description="Utterances advocating restricting entry to the UK.",
        label=label,
        split=Split.TEST,
    )


# --------------------------------------------------------------------------
# context construction
# --------------------------------------------------------------------------


def test_context_kg_is_actor_description():
    assert build_context(_instance(), ContextConfig.KG) == (
        "Jo Bloggs (MP). They has worked as a politician."
    )


def test_context_kg_degrades_to_name_sentence():
    inst = _instance(description="")
    assert build_context(inst, ContextConfig.KG) == "Jo Bloggs."


def test_context_text_single_sentence_body():
    inst = _instance(body="Migration levels are 'too high'.")
    assert build_context(inst, ContextConfig.TEXT) == "Migration levels are 'too high'."


def test_context_text_window_one_sentence_each_side():
    context = build_context(_instance(), ContextConfig.TEXT, window_sentences=1)
    assert context.startswith("Opening line of the article.")
    assert "Business groups disagreed strongly." in context
    assert "A final line closes the piece." not in context


def test_context_text_missing_body_raises():
    inst = _instance(body="   ")
    with pytest.raises(MissingArticleBody):
        build_context(inst, ContextConfig.TEXT)
    with pytest.raises(MissingArticleBody):
        build_context(inst, ContextConfig.TEXT_AND_KG)


def test_context_combined_sections_fixed_order():
    context = build_context(_instance(), ContextConfig.TEXT_AND_KG)
    assert context.index("Actor background:") < context.index("Surrounding text:")
    assert "Jo Bloggs (MP)." in context
    assert "too high" in context


def test_context_every_config_handled():
    inst = _instance()
    for config in ContextConfig:
        assert build_context(inst, config)


def test_context_unlocatable_utterance_falls_back_to_utterance():
    inst = _instance(body="Entirely unrelated text about gardening. Nothing else.")
    assert build_context(inst, ContextConfig.TEXT) == inst.utterance


# --------------------------------------------------------------------------
# prompts
# --------------------------------------------------------------------------


def test_prompt_sections_in_fixed_order():
    request = build_prompt(_instance(), ContextConfig.TEXT_AND_KG, "model-x")
    assert request.model_id == "model-x"
    roles = [r for r, _ in request.messages]
    assert roles == ["system", "user"]
    system, user = request.messages[0][1], request.messages[1][1]
    assert "decide whether a claim made by an actor aligns" in system
    assert user.index("Claim:") < user.index("Viewpoint:") < user.index("Context:")
    assert 'Jo Bloggs: "Migration levels are \'too high\'."' in user


def test_prompt_is_byte_stable():
    a = build_prompt(_instance(), ContextConfig.KG, "m")
    b = build_prompt(_instance(), ContextConfig.KG, "m")
    assert a == b
    assert a.messages == b.messages


def test_finetune_export_equals_inference_prompt_plus_gold(tmp_path):
    instances = [_instance(i, label=i % 2 == 0) for i in range(4)]

    def builder(inst):
        return build_prompt(inst, ContextConfig.TEXT_AND_KG, "m")

    out = tmp_path / "train.jsonl"
    export_finetune_file(instances, builder, out)
    for inst, line in zip(instances, out.read_text().splitlines()):
        record = json.loads(line)
        inference = builder(inst)
        assert record["messages"][:-1] == [
            {"role": r, "content": c} for r, c in inference.messages
        ]
        assert record["messages"][-1]["content"] == ("1" if inst.label else "0")


# --------------------------------------------------------------------------
# label parsing
# --------------------------------------------------------------------------


def test_parse_label_strict():
    assert parse_label(" 1\n") is True
    assert parse_label("0") is False
    with pytest.raises(ParseFailure):
        parse_label("The claim aligns with the viewpoint.")


def test_parse_label_lenient():
    assert parse_label("The answer is 1.", strict=False) is True
    assert parse_label("Answer: 0", strict=False) is False
    assert parse_label("Yes, it aligns.", strict=False) is True
    assert parse_label("no", strict=False) is False
    with pytest.raises(ParseFailure):
        parse_label("inconclusive", strict=False)


def test_parse_label_lenient_ignores_decimals():
    with pytest.raises(ParseFailure):
        parse_label("score 0.7", strict=False)


# --------------------------------------------------------------------------
# classification
# --------------------------------------------------------------------------


def test_classify_instance_happy_path():
    gateway = LlmGateway(ScriptedBackend(lambda req: "1"))
    prediction = classify_instance(
        _instance(), ContextConfig.KG, LearningMode.ZERO_SHOT, gateway, "m"
    )
    assert prediction.predicted_label is True
    assert prediction.attempts == 1
    assert not prediction.defaulted


def test_classify_instance_defaults_after_retries():
    backend = ScriptedBackend(lambda req: "cannot answer")
    gateway = LlmGateway(backend)
    prediction = classify_instance(
        _instance(), ContextConfig.KG, LearningMode.ZERO_SHOT, gateway, "m", parse_retries=2
    )
    assert prediction.predicted_label is False
    assert prediction.defaulted
    assert prediction.attempts == 3
    assert backend.calls == 3


def test_classify_instance_recovers_on_retry():
    responses = iter(["not a label", "1"])
    gateway = LlmGateway(ScriptedBackend(lambda req: next(responses)))
    prediction = classify_instance(
        _instance(), ContextConfig.KG, LearningMode.ZERO_SHOT, gateway, "m"
    )
    assert prediction.predicted_label is True
    assert prediction.attempts == 2
    assert not prediction.defaulted


# --------------------------------------------------------------------------
# experiment matrix
# --------------------------------------------------------------------------


def test_model_spec_mode_resolution():
    spec = ModelSpec(key="m", base_model_id="base", finetuned_model_id="ft:base:123")
    assert spec.model_id_for(LearningMode.ZERO_SHOT) == "base"
    assert spec.model_id_for(LearningMode.FINE_TUNED) == "ft:base:123"
    bare = ModelSpec(key="m", base_model_id="base")
    with pytest.raises(ConfigError):
        bare.model_id_for(LearningMode.FINE_TUNED)


def test_experiment_cells_full_matrix():
    models = [ModelSpec(key=f"m{i}", base_model_id=f"b{i}", finetuned_model_id=f"f{i}") for i in range(7)]
    cells = experiment_cells(models)
    assert len(cells) == 42
    assert len({c.cell_id for c in cells}) == 42


def test_classify_cell_resumption_matches_uninterrupted_run(tmp_path):
    instances = [_instance(i) for i in range(8)]
    cell = RunCell(
        ModelSpec(key="m", base_model_id="base"),
        ContextConfig.KG,
        LearningMode.ZERO_SHOT,
    )

    def script(request):
        user = request.messages[-1][1]
        return "1" if hash(user) % 2 == 0 else "0"

    # uninterrupted reference run
    full_path = tmp_path / "full.jsonl"
    classify_cell(instances, cell, LlmGateway(ScriptedBackend(script)), full_path)

    # partial run over the first half, then resume with everything
    resumed_path = tmp_path / "resumed.jsonl"
    classify_cell(instances[:4], cell, LlmGateway(ScriptedBackend(script)), resumed_path)
    backend = ScriptedBackend(script)
    classify_cell(instances, cell, LlmGateway(backend), resumed_path)
    assert backend.calls == 4  # only the missing half was classified
    assert resumed_path.read_bytes() == full_path.read_bytes()


def test_finetune_export_count_equals_split_size(tmp_path):
    import dataclasses

    from claimlens.dataset import split_dataset

    # 40 claims of 3 instances each
    instances = [
        dataclasses.replace(_instance(i), claim_id=f"claim{i // 3:04d}")
        for i in range(120)
    ]
    split = split_dataset(instances, ratios=(70, 10, 20), seed=4)
    train = [i for i in split if i.split is Split.TRAIN]

    def builder(inst):
        return build_prompt(inst, ContextConfig.KG, "m")

    count = export_finetune_file(train, builder, tmp_path / "train.jsonl")
    assert count == len(train)
    assert abs(count - 84) <= 3  # 70% of 120, within one claim group


def test_run_suite_manifest_and_files(tmp_path):
    instances = [_instance(i) for i in range(5)]
    models = [ModelSpec(key=f"m{i}", base_model_id=f"b{i}", finetuned_model_id=f"f{i}") for i in range(2)]
    cells = experiment_cells(models)
    gateway = LlmGateway(ScriptedBackend(lambda req: "0"))
    manifest = run_suite(instances, cells, gateway, tmp_path / "runs")
    assert manifest["cell_count"] == 12
    for entry in manifest["cells"]:
        path = tmp_path / "runs" / entry["predictions_file"]
        assert path.exists()
        assert entry["instances"] == 5
        predictions = load_predictions(path)
        assert len(predictions) == 5
    saved = json.loads((tmp_path / "runs" / "manifest.json").read_text())
    assert saved["cell_count"] == 12
