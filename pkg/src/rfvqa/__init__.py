"""RF modulation VQA benchmark toolkit.

Synthesizes baseband IQ waveforms for 57 modulation classes, converts
them into spectrogram / IQ-trace / joint images, assembles zero-shot and
few-shot n-way VQA datasets, and scores multimodal model responses.
"""

__version__ = "0.1.0"

from . import evaluation, modem, render, transform, vqa  # noqa: F401
