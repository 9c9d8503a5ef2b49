"""Error types raised by the feature, data, model, training and evaluation code.

Config validation uses django.core.exceptions.ValidationError instead; the
management commands map both families onto exit codes.
"""


class WavFTError(Exception):
    """Base class for every domain error."""


class WavFormatError(WavFTError):
    """The file is not a readable RIFF/WAVE file."""


class UnsupportedEncodingError(WavFTError):
    """The WAV file is valid but not 16-bit PCM mono."""


class TooShortError(WavFTError):
    """Input has fewer samples or frames than the operation needs."""


class FeatureFormatError(WavFTError):
    """A WFT1 feature file is malformed."""


class ManifestError(WavFTError):
    pass


class ShapeError(WavFTError):
    pass


class AlignmentError(WavFTError):
    """Label sequence length does not match the model's output frame count."""


class ConfigurationError(WavFTError):
    """Corpora and config disagree (e.g. p > 0 with no labelled data)."""


class NumericalError(WavFTError):
    pass


class NonFiniteGradientError(NumericalError):
    pass


class DegenerateDistractorError(WavFTError):
    """An utterance has too few masked positions to draw distractors from."""


class ContractViolation(WavFTError):
    pass


class CheckpointError(WavFTError):
    pass


class ComparisonError(WavFTError):
    """Two evaluation reports were computed on different evaluation sets."""


class EvalInputError(WavFTError):
    pass
