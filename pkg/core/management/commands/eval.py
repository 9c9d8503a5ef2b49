from pathlib import Path

import pandas as pd

from core.runs import evaluate_checkpoint
from core.storage import load_corpus

from ._common import WavFTCommand


class Command(WavFTCommand):
    help = "Frame accuracy of a checkpoint on a labelled feature manifest (inference without masking)"

    def add_arguments(self, parser):
        parser.add_argument("checkpoint")
        parser.add_argument("--manifest", required=True, help="labelled eval manifest")
        parser.add_argument("--out", help="write the EvalReport JSON here")
        parser.add_argument("--per-class", action="store_true", help="print the per-class table")
        parser.add_argument("--decimals", type=int, default=4)
        parser.add_argument("--no-record", action="store_true", help="do not store the result in the registry")

    def handle(self, *args, **options):
        utterances = load_corpus(options["manifest"], with_labels=True)
        report = evaluate_checkpoint(options["checkpoint"], utterances, record=not options["no_record"],
                                     manifest=options["manifest"])
        decimals = options["decimals"]

        self.stdout.write(f"checkpoint {report.checkpoint_id} (config {report.config_digest})")
        self.stdout.write(f"eval set {report.eval_digest}: {report.num_utterances} utterances, "
                          f"{report.num_frames} frames")
        self.stdout.write(f"frame accuracy: {report.frame_accuracy:.{decimals}f}")
        if options["per_class"]:
            table = pd.DataFrame({
                "frames": report.per_class_frames,
                "correct": report.per_class_correct,
                "accuracy": report.per_class_accuracy,
            })
            table.index.name = "class"
            self.stdout.write(table.to_string(float_format=lambda v: f"{v:.{decimals}f}"))
        if options["out"]:
            report.save(Path(options["out"]))
            self.stdout.write(self.style.SUCCESS(f"Report written to {options['out']}"))
