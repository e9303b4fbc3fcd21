"""Look inside the pretrained recognizer.

Scans every unit of the first recurrent layer for correlation with frame
loudness on emotional speech the network never saw during training, then
exports pooled layer-2 embeddings for a 2-D plot.

    python demos/04_probe_and_embeddings.py --asr runs/asr/model.ettk --out runs/probe
"""

import argparse
from pathlib import Path

from ettk.checkpoint import Checkpoint, load_frozen_asr
from ettk.pipeline import build_ser_model, ser_fold
from ettk.probe import export_embeddings, neuron_probe
from ettk.synth import SerSynthSpec, synth_ser_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--asr", type=Path, required=True)
    ap.add_argument("--out", type=Path, default=Path("runs/probe"))
    ap.add_argument("--layer", type=int, default=1)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    net = load_frozen_asr(args.asr)
    clips, records = synth_ser_corpus(SerSynthSpec(sessions=1, clips_per_speaker=12), seed=5)
    scores = []
    for unit in range(net.spec.tap_width):
        res = neuron_probe(net, clips, args.layer, unit)
        if res.mean is not None:
            scores.append((abs(res.mean), res.mean, unit))
    scores.sort(reverse=True)
    print(f"layer {args.layer}: units most correlated with loudness (mean Pearson r over {len(clips)} clips)")
    for _, r, unit in scores[:5]:
        print(f"  unit {unit:3d}  r = {r:+.3f}")

    _, _, test = ser_fold(*synth_ser_corpus(SerSynthSpec(), seed=0), 0)
    model = build_ser_model("ft_mp", 2, Checkpoint.from_model(net))
    path = args.out / "embeddings.tsv"
    path.write_text(export_embeddings(model, test, "tap-2"))
    print(f"wrote {len(test)} pooled layer-2 embeddings to {path} (id, label, vector)")


if __name__ == "__main__":
    main()
