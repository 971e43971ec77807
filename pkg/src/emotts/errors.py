"""Exception types raised across the toolkit."""


class EmottsError(Exception):
    """Base class for all toolkit errors."""


# --- audio / dsp ---

class MissingFile(EmottsError):
    pass


class UnsupportedFormat(EmottsError):
    pass


class EmptyAudio(EmottsError):
    pass


class AudioTooShort(EmottsError):
    pass


class InvalidSpectrogram(EmottsError):
    pass


class FactorOutOfRange(EmottsError):
    pass


# --- corpora / manifests ---

class MissingRoot(EmottsError):
    pass


class EmptyCorpus(EmottsError):
    pass


class BadRatios(EmottsError):
    pass


class WriteFailure(EmottsError):
    pass


class EmptyManifest(EmottsError):
    pass


# --- models ---

class ShapeMismatch(EmottsError):
    pass


class EmptyGroup(EmottsError):
    pass


class DegenerateEmbedding(EmottsError):
    pass


class InsufficientSpeakers(EmottsError):
    pass


class InsufficientEmotions(EmottsError):
    pass


class EmptyText(EmottsError):
    pass


class UninitializedState(EmottsError):
    pass


class MissingEncoderCheckpoint(EmottsError):
    pass


class AmplitudeOutOfRange(EmottsError):
    pass


class ConfigMismatch(EmottsError):
    pass


class TooFewClasses(EmottsError):
    pass


class LabelSetMismatch(EmottsError):
    pass


# --- evaluation ---

class EmptyTrials(EmottsError):
    pass


class LengthMismatch(EmottsError):
    pass


class TooFewPoints(EmottsError):
    pass


class EmptyRatings(EmottsError):
    pass


class RatingOutOfRange(EmottsError):
    pass


class MissingArtifact(EmottsError):
    pass


# --- service ---

class EmptyClipSet(EmottsError):
    pass


class UnknownSession(EmottsError):
    pass


class UnknownClip(EmottsError):
    pass


class StoreUnavailable(EmottsError):
    pass
