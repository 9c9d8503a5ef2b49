from pathlib import Path

from django.core.management.base import CommandError

from core.checkpoint import load_checkpoint
from core.runs import load_corpora, run_training
from core.trainer import kind_counts

from ._common import VALIDATION_EXIT, WavFTCommand


class Command(WavFTCommand):
    help = "Finetune an acoustic model on labelled and unlabelled feature corpora"

    def add_arguments(self, parser):
        parser.add_argument("--corpus", help="corpus directory holding labelled.tsv and unlabelled.tsv")
        parser.add_argument("--labelled", action="append", default=[], help="labelled feature manifest")
        parser.add_argument("--unlabelled", action="append", default=[],
                            help="unlabelled feature manifest; repeat to pool several corpora")
        parser.add_argument("--alpha", type=float, help="CE weight on labelled batches")
        parser.add_argument("--p", type=float, help="probability of drawing a labelled batch")
        parser.add_argument("--beta-limit", type=float, help="cap unlabelled frames at beta x labelled frames")
        parser.add_argument("--steps", type=int, help="total optimizer steps")
        parser.add_argument("--seed", type=int, help="set every seed stream at once")
        for stream in ("data", "mask", "distractor", "init"):
            parser.add_argument(f"--seed-{stream}", type=int, help=f"{stream} seed stream")
        parser.add_argument("--baseline", action="store_true",
                            help="conventional finetuning: p=1, alpha=1, labelled data only")
        parser.add_argument("--init-from", help="seed model checkpoint (parameters only)")
        parser.add_argument("--resume", help="continue a run exactly from one of its checkpoints")
        parser.add_argument("--out", help="run directory (default: $WAVFT_OUTPUT_ROOT/train-<digest>)")
        parser.add_argument("--no-record", action="store_true", help="do not store the run in the registry")
        self.add_config_arguments(parser)

    def flags(self, options):
        flags = {
            "train.alpha": options["alpha"],
            "train.p": options["p"],
            "train.total_steps": options["steps"],
            "data.beta_limit": options["beta_limit"],
        }
        for stream in ("data", "mask", "distractor", "init"):
            value = options[f"seed_{stream}"]
            flags[f"train.seeds.{stream}"] = value if value is not None else options["seed"]
        if options["baseline"]:
            if options["alpha"] not in (None, 1.0) or options["p"] not in (None, 1.0):
                raise CommandError("--baseline fixes alpha=1 and p=1", returncode=VALIDATION_EXIT)
            flags["train.alpha"] = 1.0
            flags["train.p"] = 1.0
        return flags

    def manifests(self, options):
        labelled = list(options["labelled"])
        unlabelled = list(options["unlabelled"])
        if options["corpus"]:
            corpus = Path(options["corpus"])
            labelled = labelled or [corpus / "labelled.tsv"]
            if not unlabelled and (corpus / "unlabelled.tsv").exists():
                unlabelled = [corpus / "unlabelled.tsv"]
        if not labelled and not unlabelled:
            raise CommandError("give --corpus or at least one --labelled/--unlabelled manifest",
                               returncode=VALIDATION_EXIT)
        if options["baseline"]:
            unlabelled = []
        return labelled, unlabelled

    def handle(self, *args, **options):
        if options["init_from"] and options["resume"]:
            raise CommandError("--init-from and --resume are exclusive", returncode=VALIDATION_EXIT)
        config = self.build_config(options, self.flags(options))
        labelled_paths, unlabelled_paths = self.manifests(options)

        self.stage(1, f"Loading corpora (config {config.digest})...")
        labelled, unlabelled = load_corpora(config, labelled_paths, unlabelled_paths)

        if options["resume"]:
            out_dir = Path(options["out"]) if options["out"] else Path(options["resume"]).parent
        else:
            out_dir = self.output_dir(options["out"], f"train-{config.digest}")
        init = load_checkpoint(options["init_from"]) if options["init_from"] else None
        resume = load_checkpoint(options["resume"]) if options["resume"] else None

        train_cfg = config.train
        self.stage(2, f"Training alpha={train_cfg.alpha:g} p={train_cfg.p:g} for {train_cfg.total_steps} steps...")
        result, _ = run_training(config, labelled, unlabelled, out_dir, init=init, resume=resume,
                                 record=not options["no_record"])

        counts = kind_counts(result.metrics)
        self.stdout.write(f"  labelled batches: {counts['labelled']}, unlabelled batches: {counts['unlabelled']}")
        self.stdout.write(f"  realised beta: {result.realized_beta:.4g}")
        if result.metrics:
            self.stdout.write(f"  final combined loss: {result.metrics[-1].combined:.4f}")
        self.stdout.write(self.style.SUCCESS(f"Final checkpoint: {result.final_checkpoint}"))
