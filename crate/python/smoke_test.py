"""Builds the extension module and exercises it end to end on a tiny synthetic set.

    python3 python/smoke_test.py [--no-build]
"""

import argparse
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build(dest: Path) -> None:
    subprocess.run(
        ["cargo", "build", "--release", "-p", "deepspace-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "release" / "libdeepspace_py.so"
    shutil.copy(lib, dest / "deepspace.so")


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--no-build", action="store_true", help="reuse target/release/libdeepspace_py.so")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        if args.no_build:
            shutil.copy(ROOT / "target" / "release" / "libdeepspace_py.so", tmp / "deepspace.so")
        else:
            build(tmp)
        sys.path.insert(0, str(tmp))
        import deepspace as ds

        assert ds.learning_rate(0) == 1e-4
        assert ds.learning_rate(2000) == 5e-5
        assert ds.learning_rate(4000) == 2.5e-5

        canonical = ds.Model(35)
        assert canonical.spatial_trace() == [55, 27, 27, 13, 13, 13, 11], canonical.spatial_trace()

        manifest = ds.synth(str(tmp / "raw"), classes=3, per_class=8, side=48, seed=1)
        lines = [l for l in Path(manifest).read_text().splitlines() if l and not l.startswith("#")]
        first = sorted((tmp / "raw").rglob("*.png"))[0]
        verdict = ds.blur(str(first))
        assert 0.0 <= verdict["indicator"] <= 1.0

        # same manifest for both splits keeps the check self-contained
        model_path = tmp / "m.dsw"
        rows = ds.train_model(
            manifest, manifest, str(model_path), input_side=32, reduced=True,
            iterations=30, base_lr=1e-3, batch_size=8, eval_every=10, seed=3,
        )
        assert [r[0] for r in rows] == [0, 10, 20, 30], rows

        model = ds.Model.load(str(model_path))
        assert model.num_classes == 3 and model.input_side == 32
        probs = model.probabilities(str(first))
        assert abs(sum(probs) - 1.0) < 1e-5
        top = model.classify(str(first))
        assert top["class_index"] == max(range(3), key=probs.__getitem__)

        cls, grid = model.cam(str(first))
        assert cls == top["class_index"] and len(grid) == len(grid[0]) > 0

        resaved = tmp / "again.dsw"
        model.save(str(resaved))
        assert resaved.read_bytes() == model_path.read_bytes()

        cfg = tmp / "h.txt"
        cfg.write_text(f"level1 = {model_path}\nroute.0 = {model_path}\n")
        h = ds.Hierarchy(str(cfg))
        assert h.routed_classes() == [0]
        place = h.predict(str(first))
        assert place["composite_label"].startswith(place["level1"]["class_name"])

        report = ds.analyze([(0, 0), (0, 1), (1, 1), (2, 2), (2, 1)], ["a", "b", "c"])
        assert abs(report["top1"] - 0.6) < 1e-12
        assert report["pairs"][0][:2] in [(0, 1), (1, 2)]

        try:
            ds.Model.load(str(tmp / "missing.dsw"))
        except OSError:
            pass
        else:
            raise AssertionError("loading a missing file should raise")

        print(f"ok: {len(lines)} images, {len(rows)} report rows, composite {place['composite_label']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
