from .preprocess import (
    BIN_HZ, SAMPLE_RATE, SNIPPET_LEN, add_audio_awgn, add_visual_awgn, frequency_range,
    grayscale_resize, make_spectrogram, make_spectrograms, segment_audio,
)
from .samples import (
    DEFECT_FREE, DEFECTIVE, MODALITIES, DatasetSplit, PairedSample, PairedSet,
    split_dataset, split_sizes,
)
from .synthetic import SyntheticConfig, generate_synthetic, nozzle_ring_mask
