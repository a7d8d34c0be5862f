"""Cross-checks the array container and manifest against numpy."""
import json
import pathlib
import subprocess
import sys
import tempfile

import numpy as np

cli = str(pathlib.Path(sys.argv[1]).resolve())


def fnv1a64(data: bytes) -> str:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return f"fnv1a64:{h:016x}"


def run(*args, cwd):
    return subprocess.run([cli, *args], cwd=cwd, capture_output=True, text=True)


with tempfile.TemporaryDirectory() as tmp:
    tmp = pathlib.Path(tmp)

    # engine -> numpy: synth output loads in numpy and manifest checksums verify
    r = run("synth", "--seed", "4", "--n-images", "2", "--height", "16", "--width", "12",
            "--passes", "5", "--dtype", "float32", "--out-dir", "fx", cwd=tmp)
    assert r.returncode == 0, r.stderr
    manifest = json.loads((tmp / "fx/manifest.json").read_text())
    for entry in manifest["images"]:
        for f in entry["files"].values():
            assert fnv1a64((tmp / "fx" / f["path"]).read_bytes()) == f["checksum"], f
        stack = np.load(tmp / "fx" / entry["files"]["stack"]["path"])
        gt = np.load(tmp / "fx" / entry["files"]["gt"]["path"])
        assert stack.dtype == np.float32 and stack.shape == (5, 16, 12)
        assert gt.dtype == np.uint8 and set(np.unique(gt)) <= {0, 1}

    # numpy -> engine: a float32 stack written by numpy aggregates to numpy's own mean
    rng = np.random.default_rng(0)
    planes = rng.uniform(0.0, 1.0, size=(7, 9, 11)).astype(np.float32)
    np.save(tmp / "np_stack.npy", planes)
    (tmp / "np_stack.json").write_text(json.dumps({"source_tag": "mc_dropout"}))
    r = run("aggregate", "--stack", "np_stack.npy", "--method", "mc", "--unc", "mutual_information",
            "--out-dir", "agg", cwd=tmp)
    assert r.returncode == 0, r.stderr
    mean = np.load(tmp / "agg/mean.npy")
    p = planes.astype(np.float64)
    assert np.abs(mean - p.mean(axis=0)).max() <= 1e-12

    def h(x):
        with np.errstate(divide="ignore", invalid="ignore"):
            return -np.nan_to_num(x * np.log(x)) - np.nan_to_num((1 - x) * np.log(1 - x))

    mi = np.load(tmp / "agg/mutual_information.npy")
    assert np.abs(mi - np.maximum(h(p.mean(axis=0)) - h(p).mean(axis=0), 0)).max() <= 1e-12

    # mismatched shapes are an input error
    r = run("calibrate", "--pred", "agg/mean.npy", "--gt", "fx/synth_000/gt.npy", "--out", "t.json", cwd=tmp)
    assert r.returncode == 2, r.returncode
print("numpy interop ok")
