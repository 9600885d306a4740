"""End-to-end CLI behavior via phnet.cli.main."""

import json

import numpy as np

from phnet.cli import main
from phnet.data import Manifest
from phnet.io import load_image


def _gen(tmp_path, name="corpus", extra=()):
    out = tmp_path / name
    code = main(["gen-data", "--out", str(out), "--n-samples", "24",
                 "--size", "32", "--seed", "3", *extra])
    assert code == 0
    return out


class TestGenData:
    def test_deterministic_byte_identical(self, tmp_path):
        a = _gen(tmp_path, "a")
        b = _gen(tmp_path, "b")
        files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        assert files
        for rel in files:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_refuses_non_empty_without_force(self, tmp_path, capsys):
        out = _gen(tmp_path)
        assert main(["gen-data", "--out", str(out), "--n-samples", "24",
                     "--size", "32", "--seed", "3"]) == 1
        assert "--force" in capsys.readouterr().err
        assert main(["gen-data", "--out", str(out), "--n-samples", "24",
                     "--size", "32", "--seed", "3", "--force"]) == 0

    def test_config_file_with_flag_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n-samples": 24, "size": 32, "seed": 3}))
        out = tmp_path / "c"
        assert main(["gen-data", "--config", str(cfg), "--out", str(out)]) == 0
        manifest = Manifest.load(out / "manifest.csv")
        assert len(manifest.records) == 24

    def test_invalid_config_is_validation_error(self, tmp_path):
        assert main(["gen-data", "--out", str(tmp_path / "bad"),
                     "--fidelity", "2.0"]) == 1


class TestParams:
    def test_reference_budgets(self, capsys):
        # grayscale-plus-map inputs for depth 18, RGB(+map) for depth 50
        expected = {
            ("18", 1, 2): "11174402 parameters (11M)",
            ("18", 2, 2): "5592674 parameters (5M)",
            ("50", 1, 3): "16740930 parameters (16M)",
            ("50", 3, 3): "5656892 parameters (5M)",
            ("50", 4, 4): "4216578 parameters (4M)",
        }
        for (depth, n, cin), text in expected.items():
            assert main(["params", "--depth", depth, "--n", str(n),
                         "--in-channels", str(cin)]) == 0
            assert text in capsys.readouterr().out


class TestVerify:
    def test_exit_zero_and_pass_lines(self, capsys):
        assert main(["verify"]) == 0
        out = capsys.readouterr().out
        assert "[PASS]" in out
        assert "[FAIL]" not in out


class TestMakeMaps:
    def test_zero_map_policy(self, tmp_path):
        out = _gen(tmp_path)
        assert main(["make-maps", "--corpus", str(out), "--policy", "zero_map"]) == 0
        manifest = Manifest.load(out / "manifest.csv")
        for r in manifest.records:
            arr = load_image(out / r.map)
            assert np.array_equal(arr, np.zeros_like(arr))

    def test_attention_pool_policy_rewrites_maps(self, tmp_path):
        out = _gen(tmp_path)
        before = {p.name: p.read_bytes() for p in (out / "maps").iterdir()}
        assert main(["make-maps", "--corpus", str(out), "--policy", "attention_pool",
                     "--train-producer", "--epochs", "2", "--seed", "0"]) == 0
        manifest = Manifest.load(out / "manifest.csv")
        changed = 0
        for r in manifest.records:
            arr = load_image(out / r.map)
            assert arr.min() >= 0.0 and arr.max() <= 1.0
            if (out / r.map).read_bytes() != before.get((out / r.map).name):
                changed += 1
        assert changed == len(manifest.records)


class TestTrainEval:
    def test_train_then_eval_pipeline(self, tmp_path, capsys):
        out = _gen(tmp_path, extra=("--fidelity", "1.0", "--distractors", "1.0"))
        run = tmp_path / "run"
        assert main(["train", "--corpus", str(out), "--out", str(run),
                     "--depth", "mini", "--n", "2", "--lr", "1e-3",
                     "--epochs", "3", "--patience", "3", "--seed", "1"]) == 0
        train_out = capsys.readouterr().out
        assert (run / "checkpoint.phck").exists()
        assert (run / "train_log.csv").exists()

        report_dir = tmp_path / "report"
        assert main(["eval", "--checkpoint", str(run / "checkpoint.phck"),
                     "--corpus", str(out), "--split", "val",
                     "--out", str(report_dir)]) == 0
        eval_out = capsys.readouterr().out
        assert (report_dir / "report.txt").exists()
        assert (report_dir / "roc.csv").exists()

        # eval on the val split reproduces the logged best monitor value
        best = float(train_out.split("best auc")[1].split()[0])
        evaluated = float(eval_out.split("auc")[1].split()[0])
        assert abs(best - evaluated) < 1e-4  # stdout prints 4 decimals

    def test_train_determinism(self, tmp_path):
        out = _gen(tmp_path)
        logs = []
        for name in ("r1", "r2"):
            run = tmp_path / name
            assert main(["train", "--corpus", str(out), "--out", str(run),
                         "--depth", "mini", "--n", "2", "--lr", "1e-3",
                         "--epochs", "2", "--patience", "2", "--seed", "7"]) == 0
            rows = (run / "train_log.csv").read_text().splitlines()
            logs.append([",".join(r.split(",")[:4]) for r in rows])
        assert logs[0] == logs[1]

    def test_missing_corpus_is_validation_error(self, tmp_path):
        assert main(["train", "--corpus", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "run")]) == 1
