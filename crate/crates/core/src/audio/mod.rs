//! WAV ingestion and the log-mel feature pipeline.

mod features;
mod mel;
mod stft;
mod wav;

pub use features::{extract_features, features_from_waveform, log_mel, stack_frames, FeatureMatrix};
pub use mel::{hz_to_mel, mel_centers, mel_filterbank, mel_to_hz};
pub use stft::{hann_window, stft_power, SpectrogramConfig};
pub use wav::{read_wav, write_wav, Waveform};
