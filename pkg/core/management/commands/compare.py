import pandas as pd

from core.evaluation import compare_runs
from core.runs import load_report
from core.storage import load_corpus

from ._common import WavFTCommand


class Command(WavFTCommand):
    help = "Relative frame-accuracy change of run B over run A on the same eval set"

    def add_arguments(self, parser):
        parser.add_argument("run_a", help="baseline checkpoint or EvalReport JSON")
        parser.add_argument("run_b", help="candidate checkpoint or EvalReport JSON")
        parser.add_argument("--manifest", help="labelled eval manifest, needed for checkpoints")
        parser.add_argument("--decimals", type=int, default=2)
        parser.add_argument("--per-class", action="store_true", help="print per-class accuracy deltas")

    def handle(self, *args, **options):
        utterances = load_corpus(options["manifest"], with_labels=True) if options["manifest"] else None
        report_a = load_report(options["run_a"], utterances, manifest=options["manifest"])
        report_b = load_report(options["run_b"], utterances, manifest=options["manifest"])
        comparison = compare_runs(report_a, report_b)

        self.stdout.write(comparison.format(options["decimals"]))
        if options["per_class"]:
            table = pd.DataFrame({
                "frames": report_a.per_class_frames,
                "delta": comparison.per_class_deltas,
            })
            table.index.name = "class"
            self.stdout.write(table.to_string(float_format=lambda v: f"{v:+.4f}"))
