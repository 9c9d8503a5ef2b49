from dataclasses import asdict

from django.core.management.base import CommandError

from core.config import config_digest
from core.features import (
    SyntheticCorpusSpec, beta_ratio, generate_synthetic_corpus, held_out_spec, total_frames,
)
from core.storage import write_corpus, write_sidecar

from ._common import VALIDATION_EXIT, WavFTCommand

# Stacked 160-dim frames advance 20 ms.
FRAME_SECONDS = 0.02


class Command(WavFTCommand):
    help = "Generate a deterministic synthetic labelled/unlabelled corpus and report its beta ratio"

    def add_arguments(self, parser):
        parser.add_argument("--classes", type=int, default=32)
        parser.add_argument("--labelled", type=int, default=100)
        parser.add_argument("--unlabelled", type=int, default=500)
        parser.add_argument("--eval", type=int, default=100, help="held-out labelled utterances")
        parser.add_argument("--min-frames", type=int, default=24, help="shortest utterance, in output frames")
        parser.add_argument("--max-frames", type=int, default=40, help="longest utterance, in output frames")
        parser.add_argument("--min-phone", type=int, default=2)
        parser.add_argument("--max-phone", type=int, default=6)
        parser.add_argument("--noise-floor", type=float, default=0.08)
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--out", help="corpus directory (default: $WAVFT_OUTPUT_ROOT/corpus-<seed>)")

    def handle(self, *args, **options):
        try:
            spec = SyntheticCorpusSpec(
                num_classes=options["classes"],
                utterances_labelled=options["labelled"],
                utterances_unlabelled=options["unlabelled"],
                frames_per_utterance=(options["min_frames"], options["max_frames"]),
                frames_per_phone=(options["min_phone"], options["max_phone"]),
                seed=options["seed"],
                noise_floor=options["noise_floor"],
            )
        except ValueError as e:
            raise CommandError(f"invalid corpus spec: {e}", returncode=VALIDATION_EXIT) from e
        if options["eval"] < 0:
            raise CommandError("--eval must be >= 0", returncode=VALIDATION_EXIT)

        out_dir = self.output_dir(options["out"], f"corpus-{spec.seed}")
        self.stage(1, "Synthesising training utterances...")
        labelled, unlabelled = generate_synthetic_corpus(spec)
        manifests = {
            "labelled": write_corpus(out_dir, "labelled", labelled),
            "unlabelled": write_corpus(out_dir, "unlabelled", unlabelled),
        }

        if options["eval"]:
            self.stage(2, "Synthesising held-out utterances...")
            held_out, _ = generate_synthetic_corpus(held_out_spec(spec, options["eval"]))
            manifests["eval"] = write_corpus(out_dir, "eval", held_out)

        beta = beta_ratio(labelled, unlabelled)
        document = asdict(spec)
        digest = config_digest(document)
        write_sidecar(out_dir / "corpus.json", {
            "spec": document,
            "config_digest": digest,
            "eval_utterances": options["eval"],
            "labelled_frames": total_frames(labelled),
            "unlabelled_frames": total_frames(unlabelled),
            "beta": beta,
            "manifests": {name: path.name for name, path in manifests.items()},
        })

        labelled_hours = total_frames(labelled) * FRAME_SECONDS / 3600
        unlabelled_hours = total_frames(unlabelled) * FRAME_SECONDS / 3600
        self.stdout.write(f"\nCorpus written to {out_dir} (digest {digest})")
        self.stdout.write(f"  labelled:   {len(labelled)} utterances, {labelled_hours:.4f} h")
        self.stdout.write(f"  unlabelled: {len(unlabelled)} utterances, {unlabelled_hours:.4f} h")
        self.stdout.write(f"  beta = {beta:.4g}")
