"""Smoke test for the dgpvae_py extension module.

Builds the extension with cargo (unless DGPVAE_PY_LIB points at an already
built library), imports it, and exercises the kernel, posterior, DCI, AUROC,
synthesis, training and evaluation bindings end to end on a small corpus.

    python3 python/smoke_test.py
"""

import importlib.util
import math
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build_extension() -> Path:
    override = os.environ.get("DGPVAE_PY_LIB")
    if override:
        return Path(override)
    subprocess.run(
        ["cargo", "build", "--release", "-p", "dgpvae-python", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    suffix = {"darwin": "dylib", "win32": "dll"}.get(sys.platform, "so")
    prefix = "" if sys.platform == "win32" else "lib"
    return ROOT / "target" / "release" / f"{prefix}dgpvae_py.{suffix}"


def import_extension(library: Path, workdir: Path):
    target = workdir / ("dgpvae_py.pyd" if sys.platform == "win32" else "dgpvae_py.so")
    shutil.copy(library, target)
    spec = importlib.util.spec_from_file_location("dgpvae_py", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def check_posterior(dg):
    gram = dg.cauchy_gram(1.0, 2.0, 3)
    assert len(gram) == 3 and abs(gram[0][1] - 1.0 / (1.0 + 0.25)) < 1e-12

    mean, diag, sup = [0.3, -0.2, 0.5, 0.0], [1.2, 0.8, 1.5, 1.0], [0.6, -0.4, 0.7]
    kl = dg.structured_kl(mean, diag, sup, 1.0, 2.0)
    assert kl > 0.0 and math.isfinite(kl)

    draws = dg.sample_posterior(mean, diag, sup, 20000, seed=1)
    for t in range(4):
        empirical = sum(d[t] for d in draws) / len(draws)
        assert abs(empirical - mean[t]) < 0.05, (t, empirical)


def check_metrics(dg):
    identity = dg.dci_scores([[1.0, 0.0], [0.0, 1.0]], ["a", "b"])
    assert abs(identity["disentanglement"] - 1.0) < 1e-12
    two = dg.dci_scores([[0.8, 0.2], [0.2, 0.8]])
    h2 = -(0.8 * math.log2(0.8) + 0.2 * math.log2(0.2))
    assert abs(two["disentanglement"] - (1.0 - h2)) < 1e-9

    grouped = dg.grouped_dci(
        [[0.5, 0.5, 0.0], [0.0, 0.0, 1.0]],
        ["x0", "x1", "x2"],
        [("x0", "left"), ("x1", "left"), ("x2", "right")],
    )
    assert abs(grouped["disentanglement"] - 1.0) < 1e-12
    assert grouped["importance"]["factor_names"] == ["left", "right"]

    assert dg.auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    try:
        dg.auroc([0.1, 0.2], [1, 1])
    except (ValueError, RuntimeError):
        pass
    else:
        raise AssertionError("single-class AUROC should raise")


def write_configs(workdir: Path):
    corpus_cfg = workdir / "corpus.toml"
    text = (ROOT / "configs" / "desk_corpus.toml").read_text()
    corpus_cfg.write_text(text.replace("n_series = 500", "n_series = 60").replace("series_length = 100", "series_length = 30"))

    run_cfg = workdir / "run.toml"
    text = (ROOT / "configs" / "desk_dgpvae.toml").read_text()
    run_cfg.write_text(text.replace("filters = 64", "filters = 16").replace("width = 64", "width = 16"))
    return corpus_cfg, run_cfg


def check_pipeline(dg, workdir: Path):
    corpus_cfg, run_cfg = write_configs(workdir)
    corpus_dir, run_dir = workdir / "corpus", workdir / "run"

    corpus = dg.synth(str(corpus_cfg), str(corpus_dir), seed=3)
    assert corpus.n_series == 60 and corpus.series_length == 30 and corpus.obs_dim == 12
    assert len(corpus.observations(0)) == 30 and len(corpus.observations(0)[0]) == 12
    assert len(corpus.split("test")) == 12
    assert set(corpus.labels) <= {0, 1}
    assert dg.Corpus.load(str(corpus_dir)).n_series == 60

    out = dg.train(str(run_cfg), out=str(run_dir), corpus=str(corpus_dir), seed=5)
    run = dg.TrainedRun.load(str(out))
    assert run.seed == 5 and run.latent_dim == 6
    assert run.length_scales == [2.0, 10.0, 50.0, 2.0, 10.0, 50.0]

    means = run.embed(corpus, [0, 1])
    assert len(means) == 2 and len(means[0]) == 6 and len(means[0][0]) == 30

    dci = run.dci(corpus)
    assert 0.0 <= dci["disentanglement"] <= 1.0 and 0.0 <= dci["completeness"] <= 1.0
    downstream = run.downstream(corpus)
    assert 0.0 <= downstream["auroc"] <= 1.0

    assert dg.run_cli(["eval-dci", "--run", str(run_dir)]) == 0
    assert (run_dir / "metrics.json").exists() and (run_dir / "figures" / "importance_heatmap.svg").exists()
    assert dg.run_cli(["train", "--config", str(workdir / "missing.toml")]) == 1

    try:
        dg.train(str(workdir / "missing.toml"))
    except ValueError as err:
        assert "missing.toml" in str(err)
    else:
        raise AssertionError("missing config should raise ValueError")
    return dci, downstream


def main():
    library = build_extension()
    with tempfile.TemporaryDirectory() as tmp:
        workdir = Path(tmp)
        dg = import_extension(library, workdir)
        print(f"dgpvae_py {dg.__version__} loaded from {library}")
        check_posterior(dg)
        print("kernels and posterior: ok")
        check_metrics(dg)
        print("DCI, grouped DCI and AUROC: ok")
        dci, downstream = check_pipeline(dg, workdir)
        print(
            "synth/train/embed/eval pipeline: ok "
            f"(D={dci['disentanglement']:.3f}, C={dci['completeness']:.3f}, AUROC={downstream['auroc']:.3f})"
        )
    print("smoke test passed")


if __name__ == "__main__":
    main()
