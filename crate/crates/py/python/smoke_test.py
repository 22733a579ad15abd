"""Smoke test for the imooe Python extension.

Build first:
    cargo build --release -p imooe-py --features extension-module
then run this script from the repository root.
"""
import json
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", ".."))


def load_extension():
    lib = os.path.join(ROOT, "target", "release", "libimooe_py.so")
    if not os.path.exists(lib):
        sys.exit(f"missing {lib}; build with --features extension-module first")
    tmp = tempfile.mkdtemp()
    shutil.copy(lib, os.path.join(tmp, "imooe_py.so"))
    sys.path.insert(0, tmp)
    import imooe_py

    return imooe_py


def main():
    m = load_extension()

    assert m.lambda_inv(0) == 0.0
    assert abs(m.lambda_inv(250) - 5e-4) < 1e-18
    assert m.mask_diversity_loss([[0.2, 0.8], [0.2, 0.8]]) == 1.0
    assert m.risk_variance([1.0, 3.0]) == 1.0

    shape = [1, 1, 8, 8]
    truth = [math.sin(0.3 * k) + 0.1 for k in range(64)]
    assert m.nmse([0.0] * 64, truth, shape) == 1.0
    total, low, mid, high = m.frmse(truth, truth, shape)
    assert total == 0.0

    work = tempfile.mkdtemp()
    data = os.path.join(work, "train")
    manifest = json.loads(m.generate("dr", "train", 1, 2, 16, 0, data))
    assert manifest["layout"]["n_traj"] == 2
    ds = m.Dataset.read(data)
    values, tshape = ds.trajectory(0, 0)
    assert tshape == [21, 2, 16, 16] and len(values) == 21 * 2 * 16 * 16

    config = """
epochs = 2
batch_size = 2
[weights]
warmup_end = 0
ramp_end = 1
total = 2
[model.expert]
width = 8
modes = 4
"""
    out = os.path.join(work, "run")
    history = [json.loads(line) for line in m.train(config, data, out)]
    assert len(history) == 2 and all(math.isfinite(h["total"]) for h in history)

    ckpt = os.path.join(out, "final.h5")
    model = m.Model.from_checkpoint(ckpt)
    before = model.weight_hash()
    report = json.loads(m.evaluate(ckpt, data))
    assert len(report["records"]) == 1
    assert m.Model.from_checkpoint(ckpt).weight_hash() == before

    cfg = json.loads(model.config_json())
    window = cfg["expert"]["window"]
    frames = model.predict([0.0] * (window * 2 * 256), [1, window * 2, 16, 16], [1.0] * cfg["cond_dim"], 3)
    assert len(frames) == 3 and len(frames[0]) == 2 * 256
    print("python smoke test passed")


if __name__ == "__main__":
    main()
