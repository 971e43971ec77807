"""Multi-speaker emotional TTS toolkit and SER augmentation harness."""

__version__ = "0.1.0"
