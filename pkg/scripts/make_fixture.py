#!/usr/bin/env python3
"""Generate a synthetic fixture directory and a linked copy of each split.

Usage: python scripts/make_fixture.py out/fixture [--seed 7] [--m 6] [--d 64]
"""

import argparse
import dataclasses
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from aptkit import dataio, synth


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out")
    for field in dataclasses.fields(synth.SynthConfig):
        parser.add_argument(f"--{field.name.replace('_', '-')}",
                            dest=field.name, type=type(field.default))
    args = parser.parse_args()
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(synth.SynthConfig)
                 if getattr(args, f.name) is not None}
    config = synth.SynthConfig(**overrides)
    dataset = synth.generate(config)
    paths = synth.write_dataset(dataset, args.out)
    for split in ("train", "val"):
        anns = dataio.parse_annotations(paths[split])
        linked, stats = dataio.apply_linking(anns)
        out = Path(args.out) / f"{split}-linked.jsonl"
        dataio.serialize_annotations(linked, out)
        print(f"{split}: {stats.n_elements} elements, "
              f"link rate {stats.element_link_rate:.3f} -> {out}")
    print(f"config: {config}")


if __name__ == "__main__":
    main()
