import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import pandas as pd

from django.core.management.base import CommandError

from core.config import ALPHA_GRID, BETA_GRID
from core.runs import evaluate_checkpoint, load_corpora, release_connection, run_training
from core.storage import load_corpus

from ._common import VALIDATION_EXIT, WavFTCommand

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Setting:
    name: str
    alpha: float
    p: float
    beta_limit: Optional[float] = None


def sweep_settings(alphas, betas, p):
    settings = [Setting("baseline", 1.0, 1.0)]
    settings += [Setting(f"alpha-{alpha:g}", alpha, p) for alpha in alphas]
    settings += [Setting(f"beta-{beta:g}", 1.0, p, beta) for beta in betas]
    return settings


def summarise(results):
    """Median accuracy per setting and its relative change over the baseline."""
    frame = pd.DataFrame(results)
    baseline = frame[frame["setting"] == "baseline"].set_index("seed")["frame_accuracy"]
    frame["relative_to_baseline"] = frame["frame_accuracy"] / frame["seed"].map(baseline) - 1.0
    summary = frame.groupby(["setting", "alpha", "p"], dropna=False, sort=False).agg(
        beta=("realized_beta", "median"),
        median_accuracy=("frame_accuracy", "median"),
        median_relative=("relative_to_baseline", "median"),
        seeds_above_baseline=("relative_to_baseline", lambda s: int((s > 0).sum())),
    )
    return frame, summary.reset_index()


class Command(WavFTCommand):
    help = "Train and evaluate the alpha and beta grids plus the labelled-only baseline over several seeds"

    def add_arguments(self, parser):
        parser.add_argument("--corpus", required=True, help="directory from the synth command")
        parser.add_argument("--alphas", type=float, nargs="+", default=list(ALPHA_GRID))
        parser.add_argument("--betas", type=float, nargs="*", default=list(BETA_GRID))
        parser.add_argument("--p", type=float, default=0.5, help="labelled-batch probability for non-baseline runs")
        parser.add_argument("--seeds", type=int, nargs="+", default=[0])
        parser.add_argument("--steps", type=int, help="total optimizer steps per run")
        parser.add_argument("--jobs", type=int, default=1, help="trainings to run concurrently")
        parser.add_argument("--out", help="sweep directory (default: $WAVFT_OUTPUT_ROOT/sweep)")
        parser.add_argument("--no-record", action="store_true", help="do not store runs in the registry")
        self.add_config_arguments(parser)

    def handle(self, *args, **options):
        corpus = Path(options["corpus"])
        if options["jobs"] < 1:
            raise CommandError("--jobs must be >= 1", returncode=VALIDATION_EXIT)
        settings = sweep_settings(options["alphas"], options["betas"], options["p"])
        configs = {}
        for seed in options["seeds"]:
            for setting in settings:
                configs[(setting, seed)] = self.build_config(options, {
                    "train.alpha": setting.alpha,
                    "train.p": setting.p,
                    "train.total_steps": options["steps"],
                    "data.beta_limit": setting.beta_limit,
                    "train.seeds.data": seed,
                    "train.seeds.mask": seed,
                    "train.seeds.distractor": seed,
                    "train.seeds.init": seed,
                })
        jobs = options["jobs"]
        if jobs > 1 and any(c.model.dropout > 0 for c in configs.values()):
            logger.warning("dropout uses the global torch generator; running the sweep serially")
            jobs = 1

        out_dir = self.output_dir(options["out"], "sweep")
        first = next(iter(configs.values()))
        self.stage(1, f"Loading corpus {corpus}...")
        labelled, unlabelled = load_corpora(first, [corpus / "labelled.tsv"], [corpus / "unlabelled.tsv"])
        held_out = load_corpus(corpus / "eval.tsv", with_labels=True)
        record = not options["no_record"]

        def run_one(key):
            setting, seed = key
            config = configs[key]
            run_dir = out_dir / f"{setting.name}-seed{seed}"
            try:
                result, run = run_training(config, labelled, [] if setting.p == 1.0 else unlabelled,
                                           run_dir, record=record)
                report = evaluate_checkpoint(result.final_checkpoint, held_out, record=record, training_run=run,
                                             manifest=corpus / "eval.tsv")
            finally:
                if jobs > 1:
                    release_connection()
            logger.info("%s seed %d: accuracy %.4f", setting.name, seed, report.frame_accuracy)
            return {
                "setting": setting.name,
                "alpha": setting.alpha,
                "p": setting.p,
                "beta_limit": setting.beta_limit,
                "realized_beta": result.realized_beta,
                "seed": seed,
                "frame_accuracy": report.frame_accuracy,
                "checkpoint": str(result.final_checkpoint),
                "config_digest": config.digest,
            }

        self.stage(2, f"Running {len(configs)} trainings ({jobs} at a time)...")
        if jobs == 1:
            results = [run_one(key) for key in configs]
        else:
            with ThreadPoolExecutor(max_workers=jobs, thread_name_prefix="sweep") as pool:
                results = list(pool.map(run_one, configs))

        frame, summary = summarise(results)
        frame.to_csv(out_dir / "sweep.csv", index=False)
        summary.to_csv(out_dir / "summary.csv", index=False)
        self.stage(3, "Summary")
        self.stdout.write(summary.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
        self.stdout.write(self.style.SUCCESS(f"Reports written to {out_dir}"))
