"""
Training runs and ablation grids on a dataset directory.
"""
from __future__ import annotations

import logging
import re
import time
from pathlib import Path

from tqdm import tqdm

from .config import ExperimentConfig, ModelConfig
from .data_io import DatasetManifest, SampleRecord, load_dataset
from .errors import ConfigurationError, VerificationFailure
from .metrics import compute_metrics, count_trainable_params
from .model import build_model
from .reports import EpochRecord, EvalRecord, RunReport, write_ablation_table, write_run_report
from .training import evaluate, fit, frozen_digest

logger = logging.getLogger(__name__)

SUITES = ("fusion", "temporal", "prompts", "latent", "modality", "components")
PROMPT_HOOK_COUNTS = (0, 2, 4, 6, 12)


def load_experiment_data(cfg: ExperimentConfig) -> tuple[DatasetManifest, dict[str, SampleRecord]]:
    """
    Raises:
        ConfigurationError: If the config names no dataset or it does not exist
    """
    directory = cfg.data.dataset_dir
    if directory is None:
        raise ConfigurationError("data.dataset_dir is required for training")
    if not Path(directory).is_dir():
        raise ConfigurationError(f"Dataset directory not found: {directory}")
    return load_dataset(Path(directory))


def _check_geometry(model_cfg: ModelConfig, records: dict[str, SampleRecord]) -> None:
    sample = next(iter(records.values()))
    _, channels, height, width = sample.video.shape
    if (channels, height, width) != (model_cfg.channels, *model_cfg.image_size):
        raise ConfigurationError(f"Dataset frames {(channels, height, width)} do not match the model "
                                 f"({model_cfg.channels}, {model_cfg.image_size[0]}, {model_cfg.image_size[1]})")
    if tuple(sample.audio.shape) != tuple(model_cfg.spec_size):
        raise ConfigurationError(f"Dataset spectrograms {sample.audio.shape} do not match the model "
                                 f"{tuple(model_cfg.spec_size)}")


def run_experiment(cfg: ExperimentConfig, manifest: DatasetManifest, records: dict[str, SampleRecord],
                   variant: str = "", progress: bool = False) -> RunReport:
    """
    Train on every fold except ``cfg.data.fold`` and evaluate the held-out
    fold with one and two clips.

    Raises:
        VerificationFailure: If a frozen weight changed during training
    """
    started = time.perf_counter()
    _check_geometry(cfg.model, records)
    train_ids, test_ids = manifest.split(cfg.data.fold)
    train = [records[i] for i in train_ids]
    test = [records[i] for i in test_ids]
    if not train or not test:
        raise ConfigurationError(f"Fold {cfg.data.fold} leaves {len(train)} train / {len(test)} test samples")

    model = build_model(cfg.model, seed=cfg.seed)
    breakdown = count_trainable_params(model)
    before = frozen_digest(model)
    history = fit(model, train, cfg.schedule, cfg.seed, progress)
    after = frozen_digest(model)
    if after != before:
        raise VerificationFailure("Frozen encoder weights changed during training", offending=["frozen_digest"])

    evaluations = []
    for clips in (1, 2):
        cm = evaluate(model, test, clips=clips, batch_size=cfg.schedule.batch_size)
        uar, war = compute_metrics(cm)
        evaluations.append(EvalRecord(clips=clips, uar=uar, war=war, confusion=cm.to_list()))
        logger.info(f"✅ {cfg.name} {variant or ''} clips={clips}: UAR={uar:.4f} WAR={war:.4f}")

    return RunReport(
        name=cfg.name,
        variant=variant,
        config_digest=cfg.digest(),
        config=cfg.model_dump(mode="json"),
        seed=cfg.seed,
        fold=cfg.data.fold,
        epochs=[EpochRecord(epoch=s.epoch, lr=s.lr, loss=s.mean_loss) for s in history],
        evaluations=evaluations,
        trainable_params=breakdown.total,
        param_groups=breakdown.groups,
        frozen_digest=after,
        wall_time_s=round(time.perf_counter() - started, 3),
    )


# ============= ABLATIONS =============

def ablation_variants(suite: str, base: ModelConfig) -> list[tuple[str, ModelConfig]]:
    """
    The variant grid of a suite as (label, model config) pairs.

    ITA widths and bottleneck widths are taken relative to the base
    bottleneck width (x0.5, x1, x2 and x0.5 .. x4), which reproduces
    64/128/256 and 64..512 at the paper_scale preset's width of 128.
    Variants whose bottleneck would not be narrower than d are skipped.
    """
    if suite not in SUITES:
        raise ConfigurationError(f"Unknown ablation suite '{suite}'; expected one of {', '.join(SUITES)}")
    latent = base.latent_dim
    variants: list[tuple[str, dict]] = []

    if suite == "fusion":
        variants = [("None", {"fusion_variant": "none"}), ("MULT", {"fusion_variant": "mult"}),
                    ("MULT-concat", {"fusion_variant": "mult_concat"}), ("ADD", {"fusion_variant": "add"}),
                    ("Bottleneck", {"fusion_variant": "bottleneck"})]
    elif suite == "temporal":
        bottleneck = {"fusion_variant": "bottleneck"}
        variants = [
            (f"ITA-{latent // 2}", {**bottleneck, "ita_dim": latent // 2, "use_mtt": False}),
            (f"ITA-{latent}", {**bottleneck, "ita_dim": latent, "use_mtt": False}),
            (f"ITA-{latent * 2}", {**bottleneck, "ita_dim": latent * 2, "use_mtt": False}),
            (f"MTM+ITA-{latent}", {**bottleneck, "ita_dim": latent, "use_mtt": True}),
            ("MTM", {**bottleneck, "ita_dim": None, "use_mtt": True}),
        ]
    elif suite == "prompts":
        return [(str(count), base.with_prompt_hooks(count)) for count in PROMPT_HOOK_COUNTS if count <= base.depth]
    elif suite == "latent":
        for width in (latent // 2, latent, latent * 2, latent * 4):
            if width >= base.dim:
                logger.warning(f"Skipping latent width {width}: not narrower than d={base.dim}")
                continue
            variants.append((f"d_b={width}", {"fusion_variant": "bottleneck", "latent_dim": width}))
    elif suite == "modality":
        return [("audio-only", base.unimodal("audio")), ("vision-only", base.unimodal("vision")),
                ("multimodal", base)]
    elif suite == "components":
        variants = component_variants(base)

    return [(label, ModelConfig.model_validate({**base.model_dump(), **changes})) for label, changes in variants]


def component_variants(base: ModelConfig) -> list[tuple[str, dict]]:
    """
    Components switched on in combination: static prompts (Pr.), progressive
    prompts (Pr.Pr.), the temporal transformer (MTT) and fusion bottlenecks
    (FB). JAM and the classifier are present in every variant; without MTT
    the head classifies frame-averaged JAM features.

    Progressive prompts keep the base hooks, or two spread hooks when the
    base has none.
    """
    if base.num_prompts and base.prompt_hook_layers:
        progressive = {"num_prompts": base.num_prompts, "prompt_hook_layers": list(base.prompt_hook_layers)}
    else:
        hooked = base.with_prompt_hooks(min(2, base.depth))
        progressive = {"num_prompts": hooked.num_prompts, "prompt_hook_layers": hooked.prompt_hook_layers}
    static = {"num_prompts": progressive["num_prompts"], "prompt_hook_layers": []}
    no_prompts = {"num_prompts": 0, "prompt_hook_layers": []}
    fb = {"fusion_variant": "bottleneck", "fusion_layers": base.fusion_layers}
    no_fb = {"fusion_variant": "none"}

    grid = [
        ("Frozen", no_prompts, False, no_fb),
        ("Pr.", static, False, no_fb),
        ("Pr.+Pr.Pr.", progressive, False, no_fb),
        ("Pr.+Pr.Pr.+MTT", progressive, True, no_fb),
        ("Pr.+Pr.Pr.+FB", progressive, False, fb),
        ("MTT+FB", no_prompts, True, fb),
        ("Pr.+Pr.Pr.+MTT+FB", progressive, True, fb),
    ]
    return [(label, {**prompts, **fusion, "use_mtt": mtt, "ita_dim": None})
            for label, prompts, mtt, fusion in grid]


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label)


def run_ablation(suite: str, cfg: ExperimentConfig, out_root: Path, progress: bool = False) -> list[RunReport]:
    """Train every variant of ``suite`` on the same fold and seed; writes one report per variant and a table"""
    manifest, records = load_experiment_data(cfg)
    reports = []
    variants = ablation_variants(suite, cfg.model)
    for label, model_cfg in tqdm(variants, desc=f"ablation {suite}", disable=not progress):
        variant_cfg = cfg.model_copy(update={"name": f"{cfg.name}-{suite}-{_slug(label)}", "model": model_cfg})
        report = run_experiment(variant_cfg, manifest, records, variant=label, progress=progress)
        write_run_report(report, Path(out_root) / variant_cfg.name)
        reports.append(report)
    table = write_ablation_table(suite, reports, out_root)
    logger.info(f"📋 Ablation table written to {table}")
    return reports
