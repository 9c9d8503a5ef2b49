from pathlib import Path

from django.core.management.base import CommandError

from core.exceptions import UnsupportedEncodingError, WavFTError
from core.features import extract_features, read_wav
from core.storage import ManifestRecord, read_manifest, write_features, write_manifest, write_sidecar

from ._common import RUNTIME_EXIT, WavFTCommand


class Command(WavFTCommand):
    help = "Compute 160-dim stacked log-mel features for every WAV listed in a manifest"

    def add_arguments(self, parser):
        parser.add_argument("manifest", help="TSV of <id> <wav path> [<label path>]")
        parser.add_argument("--out", help="output directory (default: $WAVFT_OUTPUT_ROOT/features)")
        parser.add_argument("--vad", action="store_true", help="keep only energy-VAD speech segments")
        self.add_config_arguments(parser)

    def handle(self, *args, **options):
        config = self.build_config(options)
        features_cfg = config.features
        out_dir = self.output_dir(options["out"], "features")
        feature_dir = out_dir / "features"
        feature_dir.mkdir(exist_ok=True)

        records = read_manifest(options["manifest"])
        self.stdout.write(f"Extracting {len(records)} utterances (config {config.digest})")
        written, failures = [], []
        for record in records:
            try:
                audio = read_wav(record.path)
                if audio.sample_rate_hz != features_cfg.sample_rate_hz:
                    raise UnsupportedEncodingError(
                        f"{record.path}: {audio.sample_rate_hz} Hz, expected {features_cfg.sample_rate_hz} Hz"
                    )
                matrix = extract_features(audio, features_cfg, vad=options["vad"])
            except (WavFTError, OSError) as e:
                failures.append({"utterance_id": record.utterance_id, "error": str(e)})
                self.stderr.write(f"  {record.utterance_id}: {e}")
                continue
            path = feature_dir / f"{record.utterance_id}.wft"
            write_features(path, matrix)
            written.append(ManifestRecord(record.utterance_id, path, record.label_path))

        manifest = out_dir / "features.tsv"
        write_manifest(manifest, written)
        write_sidecar(out_dir / "extract.json", {
            "config": config.to_dict(),
            "config_digest": config.digest,
            "vad": options["vad"],
            "source_manifest": str(Path(options["manifest"])),
            "utterances": len(written),
            "failures": failures,
        })
        self.stdout.write(f"Wrote {len(written)} feature files and {manifest}")
        if failures:
            raise CommandError(f"{len(failures)} of {len(records)} files failed", returncode=RUNTIME_EXIT)
