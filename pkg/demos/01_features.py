"""Feature extraction on a synthetic emotional utterance.

Renders one clip per emotion class, then prints the shapes of the two
input streams (the 161-bin power spectrogram fed to the ASR network and
the 27-dim MFCC+delta+pitch stream fed to the emotion network) along with
a few per-class summary statistics. Angry and happy clips should come out
louder and higher-pitched than sad ones.

    python demos/01_features.py
"""

import numpy as np

from ettk.features import asr_features, loudness, pitch_track, power_spectrogram, ser_features
from ettk.synth import SerSynthSpec, synth_ser_corpus


def main():
    clips, records = synth_ser_corpus(SerSynthSpec(sessions=1, clips_per_speaker=8), seed=0)
    clip = clips[0]
    print(f"clip {records[0].path}: {clip.duration:.2f}s at {clip.sample_rate} Hz")
    print(f"  power spectrogram  {power_spectrogram(clip).frames.shape}")
    print(f"  ASR input          {asr_features(clip).shape}  (log power, normalized)")
    print(f"  SER input          {ser_features(clip).shape}  (13 MFCC + 13 deltas + pitch, z-normalized)")
    print()
    print(f"{'label':<10} {'loudness dB':>12} {'median F0 Hz':>13}")
    seen = set()
    for c, r in zip(clips, records):
        label = r.labels[0]
        if label in seen:
            continue
        seen.add(label)
        f0 = pitch_track(c).raw
        voiced = f0[f0 > 0]
        level = float(np.median(loudness(c).frames))
        print(f"{label:<10} {level:12.1f} {np.median(voiced) if len(voiced) else float('nan'):13.1f}")


if __name__ == "__main__":
    main()
