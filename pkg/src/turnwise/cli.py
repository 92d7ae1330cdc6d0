"""Command-line surface for the pipeline.

Subcommands cover the batch path end to end: ``turns build`` (VTT + RTTM +
durations -> turns JSONL), ``plan build`` (turns -> frame plan JSONL),
``embed synth`` (plan -> synthetic STVE store), ``fit`` (train adapter +
scorer -> checkpoint), ``eval`` (-> report JSON/CSV/figure), ``ablate``
(-> ablation report), ``report deltas`` (pure arithmetic) and
``check gradients``.

Options resolve as: command-line flag > JSON config file (--config) >
built-in default, and the resolved configuration is written next to every
output. Exit codes: 0 success, 1 usage or configuration error, 2 data
error (offending file named on stderr), 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import ablation as ablation_mod
from . import corpus, embeddings, fusion, reporting, sampling, scoring, training, turns

logger = logging.getLogger("turnwise")

CONFIG_VERSION = 1

DEFAULTS = {
    "sampler": {
        "total_frames": sampling.DEFAULT_TOTAL_FRAMES,
        "merge_gap": turns.DEFAULT_MERGE_GAP,
        "fallback_window": sampling.DEFAULT_FALLBACK_WINDOW,
    },
    "fusion": {"alpha": fusion.DEFAULT_ALPHA, "d": 512},
    "eval": {
        "chunk_size": scoring.DEFAULT_CHUNK_SIZE,
        "overlap": scoring.DEFAULT_OVERLAP,
        "collation": "mean",
        "scorer": "builtin",
        "endpoint": None,
        "timeout": 30.0,
        "workers": 1,
    },
    "train": {
        "steps": training.DEFAULT_STEPS,
        "learning_rate": training.DEFAULT_LEARNING_RATE,
        "momentum": training.DEFAULT_MOMENTUM,
        "batch_size": training.DEFAULT_BATCH_SIZE,
    },
    "seed": 0,
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); our contract is 1
        raise UsageError(f"{self.prog}: {message}")


def _setup_logging(log_json: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    if log_json:
        class JsonFormatter(logging.Formatter):
            def format(self, record):
                return json.dumps(
                    {
                        "level": record.levelname.lower(),
                        "logger": record.name,
                        "event": record.getMessage(),
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )

        handler.setFormatter(JsonFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("turnwise")
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO)
    root.propagate = False


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        config = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: invalid JSON ({exc.msg})") from None
    if not isinstance(config, dict):
        raise UsageError(f"config {path}: must be a JSON object")
    version = config.get("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise UsageError(f"config {path}: unsupported config_version {version}")
    return config


def _resolve(config: dict, section: str, key: str, flag_value):
    if flag_value is not None:
        return flag_value
    if section:
        value = config.get(section, {})
        if not isinstance(value, dict):
            raise UsageError(f"config section {section!r} must be an object")
        if key in value:
            return value[key]
    elif key in config:
        return config[key]
    return DEFAULTS[section][key] if section else DEFAULTS[key]


def _resolve_path(config: dict, key: str, flag_value, required: bool = True):
    if flag_value is not None:
        return flag_value
    value = config.get("paths", {}).get(key)
    if value is None and required:
        raise UsageError(f"missing required path {key!r} (flag or config paths.{key})")
    return value


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from None


def _read_durations(path: str) -> dict[str, float]:
    try:
        return corpus.load_durations(_read_text(path))
    except corpus.CorpusError as exc:
        raise DataError(f"{path}: {exc}") from None


def _read_manifest(path: str) -> list[corpus.QAInstance]:
    try:
        return corpus.load_manifest(_read_text(path))
    except corpus.CorpusError as exc:
        raise DataError(f"{path}: {exc}") from None


def _read_plans(path: str) -> dict[str, sampling.SamplePlan]:
    try:
        return sampling.read_plans_jsonl(_read_text(path))
    except (ValueError, KeyError) as exc:
        raise DataError(f"{path}: {exc}") from None


def _read_stores(paths: list[str]) -> embeddings.EmbeddingStore:
    stores = []
    for path in paths:
        try:
            with open(path, "rb") as fh:
                stores.append(embeddings.read_store(fh))
        except OSError as exc:
            raise DataError(f"{path}: {exc.strerror or exc}") from None
        except embeddings.StoreError as exc:
            raise DataError(f"{path}: {exc}") from None
    try:
        return embeddings.merge_stores(stores)
    except (embeddings.StoreError, ValueError) as exc:
        raise DataError(f"merging stores {paths}: {exc}") from None


def _write_resolved_config(target: Path, resolved: dict) -> None:
    reporting.write_json(target, {"config_version": CONFIG_VERSION, **resolved})


# --- subcommand implementations -------------------------------------------------

def cmd_turns_build(args, config) -> int:
    durations_path = _resolve_path(config, "durations", args.durations)
    vtt_dir = _resolve_path(config, "vtt_dir", args.vtt_dir)
    rttm_dir = _resolve_path(config, "rttm_dir", args.rttm_dir)
    merge_gap = float(_resolve(config, "sampler", "merge_gap", args.merge_gap))
    out = Path(args.out)

    durations = _read_durations(durations_path)
    lines = []
    for vid in sorted(durations):
        cues = []
        vtt_path = Path(vtt_dir) / f"{vid}.vtt"
        if vtt_path.exists():
            try:
                cues = corpus.parse_vtt(_read_text(str(vtt_path)))
            except corpus.CorpusError as exc:
                raise DataError(f"{vtt_path}: {exc}") from None
        segments = []
        rttm_path = Path(rttm_dir) / f"{vid}.rttm"
        if rttm_path.exists():
            warnings: list[str] = []
            try:
                segments = corpus.parse_rttm(_read_text(str(rttm_path)), warnings)
            except corpus.CorpusError as exc:
                raise DataError(f"{rttm_path}: {exc}") from None
            for w in warnings:
                logger.warning("%s: %s", rttm_path, w)
        warnings = []
        turnset = turns.build_turns(
            segments, cues, corpus.VideoMeta(vid, durations[vid]), merge_gap, warnings
        )
        for w in warnings:
            logger.warning("%s", w)
        chunk = turns.turns_to_jsonl(turnset)
        if chunk:
            lines.append(chunk)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(lines), encoding="utf-8")
    _write_resolved_config(
        Path(str(out) + ".config.json"),
        {
            "command": "turns build",
            "sampler": {"merge_gap": merge_gap},
            "paths": {"durations": str(durations_path), "vtt_dir": str(vtt_dir), "rttm_dir": str(rttm_dir)},
        },
    )
    print(json.dumps({"videos": len(durations), "out": str(out)}))
    return 0


def cmd_plan_build(args, config) -> int:
    turns_path = _resolve_path(config, "turns", args.turns)
    durations_path = _resolve_path(config, "durations", args.durations)
    vtt_dir = _resolve_path(config, "vtt_dir", args.vtt_dir, required=False)
    total_frames = int(_resolve(config, "sampler", "total_frames", args.frames))
    fallback_window = float(_resolve(config, "sampler", "fallback_window", args.fallback_window))
    out = Path(args.out)

    durations = _read_durations(durations_path)
    try:
        turnsets = turns.read_turns_jsonl(_read_text(turns_path), durations)
    except (KeyError, ValueError) as exc:
        raise DataError(f"{turns_path}: {exc}") from None
    try:
        sampler_config = sampling.SamplerConfig(
            total_frames=total_frames, fallback_window=fallback_window
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    lines = []
    fallback_count = 0
    for vid in sorted(turnsets):
        turnset = turnsets[vid]
        cues = []
        if len(turnset) == 0 and vtt_dir is not None:
            vtt_path = Path(vtt_dir) / f"{vid}.vtt"
            if vtt_path.exists():
                try:
                    cues = corpus.parse_vtt(_read_text(str(vtt_path)))
                except corpus.CorpusError as exc:
                    raise DataError(f"{vtt_path}: {exc}") from None
        plan = sampling.build_plan(turnset, sampler_config, cues)
        fallback_count += int(plan.used_fallback)
        lines.append(sampling.plan_to_jsonl(plan))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(lines), encoding="utf-8")
    _write_resolved_config(
        Path(str(out) + ".config.json"),
        {
            "command": "plan build",
            "sampler": {"total_frames": total_frames, "fallback_window": fallback_window},
            "paths": {"turns": str(turns_path), "durations": str(durations_path)},
        },
    )
    print(json.dumps({"videos": len(turnsets), "fallback_videos": fallback_count, "out": str(out)}))
    return 0


def cmd_embed_synth(args, config) -> int:
    plan_path = _resolve_path(config, "plan", args.plan)
    dim = int(_resolve(config, "fusion", "d", args.dim))
    seed = int(_resolve(config, "", "seed", args.seed))
    out = Path(args.out)

    plans = _read_plans(plan_path)
    provider = embeddings.synthetic_provider(seed, dim)
    stores = [embeddings.store_from_plan(plans[vid], provider) for vid in sorted(plans)]
    if not stores:
        raise DataError(f"{plan_path}: no plans found")
    store = embeddings.merge_stores(stores)
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(out, "wb") as fh:
            written = embeddings.write_store(store, fh)
    except embeddings.StoreError as exc:
        raise DataError(f"{out}: {exc}") from None
    _write_resolved_config(
        Path(str(out) + ".config.json"),
        {
            "command": "embed synth",
            "fusion": {"d": dim},
            "seed": seed,
            "paths": {"plan": str(plan_path)},
        },
    )
    print(json.dumps({"records": len(store), "bytes": written, "out": str(out)}))
    return 0


def _load_eval_bundle(args, config):
    manifest_path = _resolve_path(config, "manifest", args.manifest)
    plan_path = _resolve_path(config, "plan", args.plan)
    store_paths = args.store or config.get("paths", {}).get("stores")
    if not store_paths:
        raise UsageError("at least one --store (or config paths.stores) is required")
    if isinstance(store_paths, str):
        store_paths = [store_paths]
    instances = _read_manifest(manifest_path)
    plans = _read_plans(plan_path)
    store = _read_stores(list(store_paths))
    return manifest_path, plan_path, store_paths, instances, plans, store


def cmd_fit(args, config) -> int:
    manifest_path, plan_path, store_paths, instances, plans, store = _load_eval_bundle(args, config)
    seed = int(_resolve(config, "", "seed", args.seed))
    alpha = float(_resolve(config, "fusion", "alpha", args.alpha))
    steps = int(_resolve(config, "train", "steps", args.steps))
    learning_rate = float(_resolve(config, "train", "learning_rate", args.learning_rate))
    momentum = float(_resolve(config, "train", "momentum", args.momentum))
    batch_size = int(_resolve(config, "train", "batch_size", args.batch_size))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    provider = embeddings.synthetic_provider(seed, store.dim)
    model = training.init_model(store.dim, alpha, seed=seed)
    inputs = scoring.assemble_inputs(plans, store)
    warnings: list[str] = []
    examples = training.build_examples(instances, inputs, provider, model.fusion, warnings)
    for w in warnings:
        logger.warning("%s", w)
    if not examples:
        raise DataError(f"{manifest_path}: no trainable examples (all instances dropped)")
    result = training.fit(
        model,
        examples,
        steps=steps,
        learning_rate=learning_rate,
        momentum=momentum,
        batch_size=batch_size,
        seed=seed,
    )
    training.save_checkpoint(out_dir, result.model)
    reporting.write_loss_csv(out_dir / "loss_curve.csv", result.history)
    reporting.plot_loss_curve(out_dir / "loss_curve.png", result.history)
    _write_resolved_config(
        out_dir / "resolved_config.json",
        {
            "command": "fit",
            "seed": seed,
            "fusion": {"alpha": alpha, "d": store.dim},
            "train": {
                "steps": steps,
                "learning_rate": learning_rate,
                "momentum": momentum,
                "batch_size": batch_size,
            },
            "paths": {
                "manifest": str(manifest_path),
                "plan": str(plan_path),
                "stores": [str(p) for p in store_paths],
            },
        },
    )
    losses = [loss for _, loss in result.history]
    summary = {
        "examples": len(examples),
        "steps": steps,
        "first_loss": losses[0] if losses else None,
        "final_loss": losses[-1] if losses else None,
        "min_loss": min(losses) if losses else None,
        "out": str(out_dir),
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def _make_scorer(args, config, model, seed):
    scorer_kind = _resolve(config, "eval", "scorer", args.scorer)
    if scorer_kind == "builtin":
        provider = embeddings.synthetic_provider(seed, model.fusion.d)
        return scoring.BuiltinScorer(model.scorer, provider), provider
    if scorer_kind == "external":
        endpoint = _resolve(config, "eval", "endpoint", getattr(args, "endpoint", None))
        if not endpoint:
            raise UsageError("external scorer requires --endpoint (or config eval.endpoint)")
        timeout = float(_resolve(config, "eval", "timeout", getattr(args, "timeout", None)))
        return scoring.ExternalScorer(endpoint, timeout=timeout), None
    raise UsageError(f"unknown scorer {scorer_kind!r} (expected builtin or external)")


def _eval_once(instances, inputs, scorer, model, eval_opts):
    return scoring.evaluate(
        instances,
        inputs,
        scorer,
        model.adapter,
        model.fusion,
        chunk_size=eval_opts["chunk_size"],
        overlap=eval_opts["overlap"],
        collation=eval_opts["collation"],
        workers=eval_opts["workers"],
    )


def _eval_opts(args, config) -> dict:
    return {
        "chunk_size": int(_resolve(config, "eval", "chunk_size", args.chunk_size)),
        "overlap": int(_resolve(config, "eval", "overlap", args.overlap)),
        "collation": _resolve(config, "eval", "collation", args.collation),
        "workers": int(_resolve(config, "eval", "workers", args.workers)),
    }


def cmd_eval(args, config) -> int:
    manifest_path, plan_path, store_paths, instances, plans, store = _load_eval_bundle(args, config)
    checkpoint_dir = _resolve_path(config, "checkpoint_dir", args.checkpoint)
    seed = int(_resolve(config, "", "seed", args.seed))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    try:
        model = training.load_checkpoint(checkpoint_dir)
    except (OSError, ValueError) as exc:
        raise DataError(f"{checkpoint_dir}: {exc}") from None
    if model.fusion.d != store.dim:
        raise DataError(
            f"store dim {store.dim} does not match checkpoint dim {model.fusion.d}"
        )
    eval_opts = _eval_opts(args, config)
    try:
        scorer, _provider = _make_scorer(args, config, model, seed)
    except scoring.TransportError as exc:
        raise DataError(str(exc)) from None

    inputs = scoring.assemble_inputs(plans, store)
    report = _eval_once(instances, inputs, scorer, model, eval_opts)
    if isinstance(scorer, scoring.ExternalScorer):
        scorer.close()

    reporting.write_json(out_dir / "report.json", report.to_json_dict())
    reporting.write_eval_csv(out_dir / "per_video.csv", report)
    reporting.plot_eval_accuracy(out_dir / "accuracy.png", report)
    _write_resolved_config(
        out_dir / "resolved_config.json",
        {
            "command": "eval",
            "seed": seed,
            "eval": eval_opts,
            "paths": {
                "manifest": str(manifest_path),
                "plan": str(plan_path),
                "stores": [str(p) for p in store_paths],
                "checkpoint_dir": str(checkpoint_dir),
            },
        },
    )
    print(json.dumps({"n": report.n, "accuracy": report.accuracy, "skipped": len(report.skipped)}))
    return 0


def cmd_ablate(args, config) -> int:
    manifest_path, plan_path, store_paths, instances, plans, store = _load_eval_bundle(args, config)
    checkpoint_dir = _resolve_path(config, "checkpoint_dir", args.checkpoint)
    substitute_path = _resolve_path(config, "substitute_store", args.substitute_store, required=False)
    seed = int(_resolve(config, "", "seed", args.seed))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    try:
        model = training.load_checkpoint(checkpoint_dir)
    except (OSError, ValueError) as exc:
        raise DataError(f"{checkpoint_dir}: {exc}") from None
    if model.fusion.d != store.dim:
        raise DataError(f"store dim {store.dim} does not match checkpoint dim {model.fusion.d}")
    scorer_kind = _resolve(config, "eval", "scorer", args.scorer)
    if scorer_kind != "builtin":
        raise UsageError("ablate supports only the builtin scorer (gibberish re-embedding)")
    eval_opts = _eval_opts(args, config)
    provider = embeddings.synthetic_provider(seed, model.fusion.d)
    scorer = scoring.BuiltinScorer(model.scorer, provider)
    embed_text = lambda text: provider.embed_text(text).values

    inputs = scoring.assemble_inputs(plans, store)

    def run(perturbation: ablation_mod.Perturbation) -> float:
        warnings: list[str] = []
        perturbed = ablation_mod.apply_perturbation(
            perturbation, inputs, text_embedder=embed_text, warning_sink=warnings
        )
        for w in warnings:
            logger.warning("%s", w)
        return _eval_once(instances, perturbed, scorer, model, eval_opts).accuracy

    acc_base = run(ablation_mod.Perturbation("none"))
    acc_blank = run(ablation_mod.Perturbation("blank_video"))
    acc_gibberish = run(ablation_mod.Perturbation("gibberish_transcript"))
    if substitute_path is not None:
        substitute = _read_stores([substitute_path])
        acc_defaced = run(ablation_mod.Perturbation("substitute_video", substitute))
        report = ablation_mod.delta_report(acc_base, acc_defaced, acc_blank, acc_gibberish, "fraction")
    else:
        report = ablation_mod.AblationReport(
            acc_base=acc_base,
            acc_defaced=None,
            acc_blank=acc_blank,
            acc_gibberish=acc_gibberish,
            delta_defaced=None,
            delta_blank=acc_base - acc_blank,
            delta_gibberish=acc_base - acc_gibberish,
            units="fraction",
        )

    reporting.write_json(out_dir / "ablation.json", report.to_json_dict())
    reporting.write_ablation_csv(out_dir / "ablation.csv", report)
    reporting.plot_ablation(out_dir / "ablation.png", report)
    _write_resolved_config(
        out_dir / "resolved_config.json",
        {
            "command": "ablate",
            "seed": seed,
            "eval": eval_opts,
            "paths": {
                "manifest": str(manifest_path),
                "plan": str(plan_path),
                "stores": [str(p) for p in store_paths],
                "checkpoint_dir": str(checkpoint_dir),
                "substitute_store": str(substitute_path) if substitute_path else None,
            },
        },
    )
    print(json.dumps(report.to_json_dict()["deltas"], sort_keys=True))
    return 0


def cmd_report_deltas(args, config) -> int:
    try:
        report = ablation_mod.delta_report(
            args.base, args.defaced, args.blank, args.gibberish, units=args.units
        )
    except ablation_mod.UnitMismatch as exc:
        raise DataError(str(exc)) from None
    payload = report.to_json_dict()
    print(json.dumps(payload, sort_keys=True))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        reporting.write_json(out_dir / "ablation.json", payload)
        reporting.write_ablation_csv(out_dir / "ablation.csv", report)
        reporting.plot_ablation(out_dir / "ablation.png", report)
    return 0


def cmd_check_gradients(args, config) -> int:
    dim = int(_resolve(config, "fusion", "d", args.dim))
    seed = int(_resolve(config, "", "seed", args.seed))
    tolerance = args.tolerance
    rng = np.random.default_rng(seed)
    model = training.init_model(dim, alpha=0.5, seed=seed)
    model.scorer.w = 0.5 * rng.standard_normal(4 * dim)
    model.scorer.b0 = float(rng.standard_normal())
    examples = []
    for i in range(4):
        examples.append(
            training.TrainExample(
                question_emb=rng.standard_normal(dim),
                answer_emb=rng.standard_normal(dim),
                fused_inputs=tuple(rng.standard_normal(dim) for _ in range(3)),
                label=i % 2,
                qa_id=f"check{i}",
            )
        )
    flat_loss = training.make_flat_loss(model, examples)
    params = training.flatten_params(model)
    max_coords = None if dim <= 32 else 2048
    report = fusion.gradient_check(
        flat_loss, params, tolerance, step=args.step, max_coords=max_coords, seed=seed
    )
    print(
        json.dumps(
            {
                "d": dim,
                "max_rel_error": report.max_rel_error,
                "n_checked": report.n_checked,
                "pass": report.passed,
            },
            sort_keys=True,
        )
    )
    return 0 if report.passed else 3


# --- parser construction ---------------------------------------------------------

def build_parser() -> CliParser:
    parser = CliParser(prog="turnwise", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"turnwise {__version__}")
    parser.add_argument("--config", help="JSON configuration file (flags override it)")
    parser.add_argument("--log-json", action="store_true", help="structured JSON logs on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p_turns = sub.add_parser("turns", help="speaking-turn construction")
    turns_sub = p_turns.add_subparsers(dest="subcommand", required=True)
    p = turns_sub.add_parser("build", help="VTT + RTTM + durations -> turns JSONL")
    p.add_argument("--vtt-dir")
    p.add_argument("--rttm-dir")
    p.add_argument("--durations")
    p.add_argument("--merge-gap", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_turns_build)

    p_plan = sub.add_parser("plan", help="frame plan construction")
    plan_sub = p_plan.add_subparsers(dest="subcommand", required=True)
    p = plan_sub.add_parser("build", help="turns JSONL -> sample plan JSONL")
    p.add_argument("--turns")
    p.add_argument("--durations")
    p.add_argument("--vtt-dir", help="needed for fallback transcript windows")
    p.add_argument("--frames", type=int, help="total frame budget M")
    p.add_argument("--fallback-window", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan_build)

    p_embed = sub.add_parser("embed", help="embedding stores")
    embed_sub = p_embed.add_subparsers(dest="subcommand", required=True)
    p = embed_sub.add_parser("synth", help="plan -> synthetic STVE store")
    p.add_argument("--plan")
    p.add_argument("--dim", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed_synth)

    p = sub.add_parser("fit", help="train adapter + scorer on a manifest")
    _add_bundle_flags(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="score a manifest and report accuracy")
    _add_bundle_flags(p)
    _add_eval_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="evaluate under each modality perturbation")
    _add_bundle_flags(p)
    _add_eval_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--substitute-store", help="STVE store standing in for defaced videos")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p_report = sub.add_parser("report", help="report arithmetic")
    report_sub = p_report.add_subparsers(dest="subcommand", required=True)
    p = report_sub.add_parser("deltas", help="four accuracies -> ablation deltas")
    p.add_argument("--base", type=float, required=True)
    p.add_argument("--defaced", type=float, required=True)
    p.add_argument("--blank", type=float, required=True)
    p.add_argument("--gibberish", type=float, required=True)
    p.add_argument("--units", choices=["auto", "percent", "fraction"], default="auto")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report_deltas)

    p_check = sub.add_parser("check", help="self checks")
    check_sub = p_check.add_subparsers(dest="subcommand", required=True)
    p = check_sub.add_parser("gradients", help="analytic vs finite-difference gradients")
    p.add_argument("--dim", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--step", type=float, default=1e-5)
    p.set_defaults(func=cmd_check_gradients)

    return parser


def _add_bundle_flags(p) -> None:
    p.add_argument("--manifest")
    p.add_argument("--plan")
    p.add_argument("--store", action="append", help="STVE store (repeatable)")
    p.add_argument("--seed", type=int)


def _add_eval_flags(p) -> None:
    p.add_argument("--scorer", choices=["builtin", "external"])
    p.add_argument("--endpoint", help="external scorer endpoint (cmd:... or tcp:host:port)")
    p.add_argument("--timeout", type=float)
    p.add_argument("--chunk-size", type=int)
    p.add_argument("--overlap", type=int)
    p.add_argument("--collation", choices=["mean", "max"])
    p.add_argument("--workers", type=int)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _setup_logging(args.log_json)
        config = _load_config(args.config)
        return args.func(args, config)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (corpus.CorpusError, embeddings.StoreError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        return 0
    except Exception as exc:  # internal invariant violation
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
