"""
uninet-lab command line.

    python -m cli gen    --count 200 --out lab/data/train
    python -m cli train  --data lab/data/train --tasks od,ss,is,d,id --epochs 20
    python -m cli eval   --checkpoint lab/run/model.pt --data lab/data/val
    python -m cli attack --checkpoint lab/run/model.pt --data lab/data/val --attack pgd --loss semantic,geometric --eps 1
    python -m cli attack ... --attack dag  --swap person:car
    python -m cli attack ... --attack hide --class person --head both --eps 2
    python -m cli report --campaign lab/attack-pgd
    python -m cli recipe recipe.json

Exit codes: 0 success, 1 runtime failure (logged), 2 usage error.
"""
import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from dotenv import load_dotenv
from pydantic import ValidationError

from attacks.config import AttackConfig, AttackError
from attacks.hiding import HIDING_EPSILON
from cli.recipe import ExperimentRecipe
from cli.report import ReportInputError, build_report
from losses.bundle import GROUP_SELECTORS, LOSS_NAMES
from maskcodec import MaskCodecError
from observability.logging_setup import configure_logging
from observability.prometheus_metrics import start_metrics_server
from orchestration.campaign import run_campaign
from orchestration.evaluator import evaluate
from orchestration.state import Campaign, CampaignCell, RunConfig, RunnerError
from orchestration.timing import timing_probe
from orchestration.trainer import train
from scenegen.dataset import load_manifest, render_dataset
from scenegen.errors import DatasetError
from scenegen.spec import SceneSpec
from uninet.checkpoint import CheckpointError, load_checkpoint
from uninet.config import ModelConfigError, format_tasks, validate_task_mask

load_dotenv()

logger = logging.getLogger("cli")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

RUNTIME_ERRORS = (DatasetError, CheckpointError, MaskCodecError, RunnerError, AttackError, ReportInputError,
                  ValueError, KeyError, OSError)


class UsageError(Exception):
    pass


def lab_dir() -> Path:
    return Path(os.getenv("UNINET_LAB_DIR", "./lab"))


def comma_list(text: str) -> List[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def comma_floats(text: str) -> List[float]:
    try:
        return [float(s) for s in comma_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma list of numbers, got {text!r}")


# ── gen ───────────────────────────────────────────────────────────

def cmd_gen(args) -> int:
    spec = SceneSpec.model_validate_json(Path(args.spec).read_text()) if args.spec else SceneSpec()
    if args.seed is not None:
        spec = spec.model_copy(update={"seed": args.seed})
    manifest = render_dataset(spec, args.count, args.out, jobs=args.jobs)
    print(manifest.root)
    return EXIT_OK


# ── train / eval ──────────────────────────────────────────────────

TRAIN_OVERRIDES = ("tasks", "epochs", "lr", "batch_size", "seed", "eval_every")


def cmd_train(args) -> int:
    base: Dict = RunConfig.load(args.config).model_dump() if args.config else {}
    for key in TRAIN_OVERRIDES:
        value = getattr(args, key)
        if value is not None:
            base[key] = value
    if args.data:
        base["train_manifest"] = args.data
    if args.val:
        base["val_manifest"] = args.val
    if "train_manifest" not in base:
        raise UsageError("train needs --data (or a --config naming train_manifest)")

    try:
        tasks = format_tasks(validate_task_mask(base.get("tasks", "od,ss,is,d,id")))
    except ModelConfigError as e:
        raise UsageError(str(e))
    base["tasks"]   = tasks
    base["out_dir"] = args.out or base.get("out_dir") or str(lab_dir() / f"run-{tasks.replace(',', '-')}")

    try:
        config = RunConfig.model_validate(base)
    except ValidationError as e:
        raise UsageError(str(e))
    result = train(config, progress=not args.quiet)
    print(result.checkpoint)
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        tasks = validate_task_mask(args.tasks) if args.tasks else None
    except ModelConfigError as e:
        raise UsageError(str(e))
    report = evaluate(args.checkpoint, args.data, label=args.label, limit=args.limit,
                      progress=not args.quiet, tasks=tasks)
    if args.timing:
        model, extra = load_checkpoint(args.checkpoint)
        mask = model.tasks & tasks if tasks else model.tasks
        if mask:
            report.extra["forward_seconds"] = timing_probe(model, n=args.timing, task_mask=mask,
                                                           image_size=tuple(extra.get("image_size") or (128, 128)))
    out = Path(args.out) if args.out else lab_dir() / "eval" / f"{args.label}.csv"
    report.to_csv(out)
    report.to_json(out.with_suffix(".json"))
    print(out)
    return EXIT_OK


# ── attack ────────────────────────────────────────────────────────

def _thing_names(data: str) -> List[str]:
    return [t.name for t in load_manifest(data).spec.thing_classes]


def build_cells(args) -> List[CampaignCell]:
    """Campaign cells for one `attack` invocation; raises UsageError for incompatible flags."""
    kind = args.attack
    if args.loss is not None and kind != "pgd":
        raise UsageError("--loss only applies to --attack pgd")
    if args.swap is not None and kind != "dag":
        raise UsageError("--swap only applies to --attack dag")
    if (args.hide_class is not None or args.head is not None) and kind != "hide":
        raise UsageError("--class / --head only apply to --attack hide")
    if args.include_seg and kind != "dag":
        raise UsageError("--include-seg only applies to --attack dag")

    if kind == "pgd":
        losses = comma_list(args.loss) if args.loss else ["mtl"]
        unknown = [name for name in losses if name not in GROUP_SELECTORS + LOSS_NAMES]
        if unknown:
            raise UsageError(f"unknown --loss {unknown}; expected {', '.join(GROUP_SELECTORS + LOSS_NAMES)}")
        return [
            CampaignCell(name=f"pgd-{loss}-eps{eps:g}", kind="pgd",
                         attack=AttackConfig(epsilon=eps, step=args.alpha, iterations=args.iters, loss_selector=loss))
            for loss in losses for eps in (args.eps or [1.0])
        ]

    things = _thing_names(args.data)
    if kind == "dag":
        if args.swap is None or args.swap.count(":") != 1:
            raise UsageError("--attack dag needs --swap c1:c2")
        c1, c2 = args.swap.split(":")
        if c1 == c2 or c1 not in things or c2 not in things:
            raise UsageError(f"--swap needs two distinct thing classes out of {things}, got {args.swap!r}")
        if args.eps is not None and len(args.eps) > 1:
            raise UsageError("--attack dag takes at most one --eps (the optional perturbation cap)")
        return [CampaignCell(
            name                 = f"dag-{c1}-{c2}",
            kind                 = "dag",
            swap                 = (c1, c2),
            dag_max_iters        = args.dag_iters,
            dag_gamma            = args.gamma,
            include_segmentation = args.include_seg,
            dag_epsilon          = args.eps[0] if args.eps else None,
        )]

    if args.hide_class is None:
        raise UsageError("--attack hide needs --class <thing class>")
    if args.hide_class not in things:
        raise UsageError(f"--class must be one of {things}, got {args.hide_class!r}")
    heads = ["seg", "depth"] if args.head in (None, "both") else [args.head]
    return [
        CampaignCell(name=f"hide-{args.hide_class}-{head}-eps{eps:g}", kind="hide", hide_class=args.hide_class,
                     head=head, attack=AttackConfig(epsilon=eps, step=args.alpha, iterations=args.iters))
        for head in heads for eps in (args.eps or [HIDING_EPSILON])
    ]


def cmd_attack(args) -> int:
    try:
        campaign = Campaign(
            checkpoint    = args.checkpoint,
            manifest      = args.data,
            out_dir       = args.out or str(lab_dir() / f"attack-{args.attack}"),
            cells         = build_cells(args),
            limit         = args.limit,
            jobs          = args.jobs,
            save_examples = args.save_examples,
        )
    except ValidationError as e:
        raise UsageError(str(e))
    result = run_campaign(campaign, progress=not args.quiet)
    print(result.summary)
    failed = [c.cell.name for c in result.cells if c.error is not None]
    if failed:
        logger.error("[CLI] %d cell(s) failed: %s", len(failed), ", ".join(failed))
        return EXIT_RUNTIME
    return EXIT_OK


# ── report / recipe ───────────────────────────────────────────────

def cmd_report(args) -> int:
    if not args.campaign and not args.summary:
        raise UsageError("report needs --campaign <dir> or --summary <csv>")
    hidden = None
    if args.campaign:
        root    = Path(args.campaign)
        summary = root / "summary.csv"
        if (root / "campaign.json").is_file():
            cells  = Campaign.load(root / "campaign.json").cells
            hidden = {c.name: c.hide_class for c in cells if c.kind == "hide"}
    else:
        summary = Path(args.summary)
    out = Path(args.out) if args.out else summary.parent / "report"
    build_report(summary, out, hidden=hidden)
    print(out)
    return EXIT_OK


def cmd_recipe(args) -> int:
    recipe = ExperimentRecipe.load(args.recipe)
    try:
        recipe.check_inputs()
    except ValueError as e:
        raise UsageError(str(e))
    for i, stage in enumerate(recipe.stages):
        argv = stage.argv()
        logger.info("[Recipe] %s stage %d: %s", recipe.name, i, " ".join(argv))
        code = main(argv, setup=False)
        if code != EXIT_OK:
            logger.error("[Recipe] stage %d (%s) exited with %d", i, stage.stage, code)
            return code
    return EXIT_OK


# ── Parser ────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uninet", description="desk-scale multi-task network and attack lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="render a synthetic scene dataset")
    p.add_argument("--spec", help="SceneSpec JSON (defaults when omitted)")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on a task subset")
    p.add_argument("--data", help="training split")
    p.add_argument("--val", help="validation split")
    p.add_argument("--config", help="RunConfig JSON; flags override it")
    p.add_argument("--tasks", default=None, help="comma list of od,ss,is,d,id")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--eval-every", dest="eval_every", type=int, default=None)
    p.add_argument("--out", help="run directory")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--label", default="clean")
    p.add_argument("--tasks", default=None, help="comma list of od,ss,is,d,id (default: every task of the checkpoint)")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--timing", type=int, default=0, help="also time N single-image forwards")
    p.add_argument("--out", help="report CSV path")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attack", help="run an attack campaign")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--attack", choices=("pgd", "dag", "hide"), required=True)
    p.add_argument("--loss", default=None, help="pgd: comma list of mtl,semantic,geometric or single losses")
    p.add_argument("--eps", type=comma_floats, default=None, help="comma list, 0-255 scale")
    p.add_argument("--alpha", type=float, default=1.0, help="step size, 0-255 scale")
    p.add_argument("--iters", type=int, default=None, help="default: min(floor(eps)+4, ceil(1.25 eps))")
    p.add_argument("--swap", default=None, help="dag: c1:c2")
    p.add_argument("--include-seg", dest="include_seg", action="store_true", help="dag: also swap segmentation pixels")
    p.add_argument("--dag-iters", dest="dag_iters", type=int, default=30)
    p.add_argument("--gamma", type=float, default=0.5, help="dag step, 0-255 scale")
    p.add_argument("--class", dest="hide_class", default=None, help="hide: thing class")
    p.add_argument("--head", choices=("seg", "depth", "both"), default=None)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--save-examples", dest="save_examples", type=int, default=0)
    p.add_argument("--out", help="campaign directory")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("report", help="plots and tables from a campaign")
    p.add_argument("--campaign", help="campaign directory (reads summary.csv, campaign.json)")
    p.add_argument("--summary", help="a summary CSV")
    p.add_argument("--out", help="report directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("recipe", help="run an ExperimentRecipe")
    p.add_argument("recipe")
    p.set_defaults(func=cmd_recipe)
    return parser


def main(argv: Optional[Sequence[str]] = None, setup: bool = True) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    if setup:
        configure_logging()
        port = os.getenv("UNINET_METRICS_PORT")
        if port:
            start_metrics_server(int(port))

    try:
        return args.func(args)
    except UsageError as e:
        print(f"{parser.prog} {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except RUNTIME_ERRORS as e:
        logger.error("[CLI] %s failed: %s: %s", args.command, type(e).__name__, e)
        return EXIT_RUNTIME
