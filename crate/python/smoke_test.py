"""Smoke test for the `auscult` Python extension.

Builds the extension with cargo (unless AUSCULT_LIB points at a built
library), loads it, and runs a tiny end-to-end pipeline.
"""

import importlib.machinery
import importlib.util
import json
import math
import os
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def build_library() -> pathlib.Path:
    override = os.environ.get("AUSCULT_LIB")
    if override:
        return pathlib.Path(override)
    subprocess.run(
        ["cargo", "build", "-p", "auscult-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    target = pathlib.Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target"))
    for name in ("libauscult.so", "libauscult.dylib", "auscult.dll"):
        candidate = target / "debug" / name
        if candidate.exists():
            return candidate
    raise FileNotFoundError("built extension not found under " + str(target))


def load(lib: pathlib.Path, workdir: pathlib.Path):
    suffix = importlib.machinery.EXTENSION_SUFFIXES[0]
    dest = workdir / ("auscult" + suffix)
    shutil.copy(lib, dest)
    spec = importlib.util.spec_from_file_location("auscult", dest)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def check_numerics(au):
    a = [[float(i * j % 7) for j in range(5)] for i in range(6)]
    assert abs(au.cka(a, a) - 1.0) < 1e-9
    scaled = [[3.0 * x for x in row] for row in a]
    assert abs(au.cka(a, scaled) - 1.0) < 1e-9
    assert au.auroc([0.1, 0.9, 0.5, 0.5], [False, True, True, False]) == 0.875
    v = au.hash_embed("wheezes present")
    assert len(v) == 2048 and abs(math.sqrt(sum(x * x for x in v)) - 1.0) < 1e-9
    tone = [math.sin(2 * math.pi * 440 * t / 16000) for t in range(16000)]
    spec = au.logmel(tone)
    assert len(spec) == 98 and len(spec[0]) == 64


def check_reports(au):
    meta = {
        "dataset": "icbhi",
        "fields": [
            ["Wheezes", "Yes"],
            ["Crackles", "No"],
            ["Age", 63.0],
            ["Sex", "M"],
            ["Diagnosis", "COPD"],
        ],
        "subject_id": "S1",
        "labels": ["COPD"],
        "modality": "respiratory",
    }
    text = au.template_report(json.dumps(meta), 7)
    assert text == au.template_report(json.dumps(meta), 7)
    assert au.validate_report(text, json.dumps(meta)) == []
    bad = au.validate_report("Crackles are heard.", json.dumps(meta))
    assert bad and "crackl" in bad[0][0].lower()


def check_index(au):
    index = au.Index(["a", "b", "c"], [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    assert len(index) == 3
    top = index.topk([1.0, 0.1], 2)
    assert [t[0] for t in top] == ["a", "c"]


def check_pipeline(au, work: pathlib.Path):
    overrides = [
        "data.clips=24",
        "data.subjects=8",
        "data.clip_seconds=1.0",
        "encoder.embed_dim=16",
        "encoder.blocks=1",
        "encoder.heads=2",
        "encoder.ffn_dim=32",
        "encoder.decoder_dim=8",
        "encoder.max_patches=32",
        "align.train.epochs=1",
        "align.train.batch=4",
        "align.train.grad_accum=1",
        "align.train.warmup_steps=1",
        "align.train.lr=1e-3",
        "probe.seeds=[0, 1]",
        "probe.test_fraction=0.25",
        "probe.config.max_epochs=5",
        "zeroshot.k=3",
    ]
    data = work / "data"
    summary = json.loads(au.gen_data(data, None, overrides))
    assert summary["clips"] == 24
    manifest = au.manifest_path(data)
    run = json.loads(au.align(manifest, work / "align", None, overrides))
    assert len(run["epoch_align_means"]) == 1
    ckpt = work / "align" / "final.ckpt"
    assert au.embed(ckpt, manifest, work / "emb", "shared-512", None, overrides) == 24
    probe = json.loads(au.probe(work / "emb" / "embeddings.acemb", manifest, work / "probe", None, overrides))
    assert len(probe["result"]["values"]) == 2
    model = au.Model(ckpt)
    first = json.loads(open(manifest).readline())
    vec = model.embed_file(data / first["spectrogram_path"])
    assert len(vec) == au.SHARED_DIM
    test_overrides = overrides + ["data.id_prefix=test", "data.seed=5"]
    au.gen_data(work / "test", None, test_overrides)
    zs = json.loads(au.zeroshot(ckpt, manifest, au.manifest_path(work / "test"), work / "zs", None, overrides))
    assert 0.0 <= zs["auroc"] <= 1.0
    try:
        au.zeroshot(ckpt, manifest, manifest, work / "leak", None, overrides)
    except ValueError as e:
        assert "share" in str(e)
    else:
        raise AssertionError("leakage guard did not fire")


def main():
    with tempfile.TemporaryDirectory() as tmp:
        work = pathlib.Path(tmp)
        au = load(build_library(), work)
        check_numerics(au)
        check_reports(au)
        check_index(au)
        check_pipeline(au, work)
    print("python smoke test: ok")


if __name__ == "__main__":
    sys.exit(main())
