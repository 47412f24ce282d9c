"""CLI surface: commands, exit codes, file outputs."""

import json
from pathlib import Path

import numpy as np
import pytest

from hif import hift
from hif.cli import main
from hif.pnm import write_pnm
from hif.synthetic import smooth_texture

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def run(args):
    return main(args)


class TestExtractMv:
    def test_identical_frames_give_zero_tensor(self, tmp_path):
        frames = tmp_path / "frames"
        frames.mkdir()
        img = smooth_texture(np.random.default_rng(0), 64, 64)
        write_pnm(frames / "a.pgm", img)
        write_pnm(frames / "b.pgm", img)
        out = tmp_path / "mv.hift"
        assert run(["extract-mv", str(frames), "--out", str(out)]) == 0
        tensor = hift.read_tensor(out)
        assert tensor.shape == (1, 4, 4, 2)
        assert not tensor.any()
        sidecar = json.loads(Path(str(out) + ".json").read_text())
        assert sidecar["search_range"] == 8
        assert "tie_break" in sidecar and "normalization" in sidecar

    def test_repo_fixture_pan(self, tmp_path):
        # The shipped fixture frames pan by (3, -2) per step.
        out = tmp_path / "mv.hift"
        assert run(["extract-mv", str(FIXTURES), "--out", str(out)]) == 0
        tensor = hift.read_tensor(out)
        assert tensor.shape == (2, 4, 4, 2)
        np.testing.assert_allclose(tensor[:, 1:3, 1:3, 0], 3 / 8)
        np.testing.assert_allclose(tensor[:, 1:3, 1:3, 1], -2 / 8)

    def test_corrupt_header_nonzero_exit(self, tmp_path, capsys):
        frames = tmp_path / "frames"
        frames.mkdir()
        (frames / "a.pgm").write_bytes(b"P5\nnot a header\n")
        (frames / "b.pgm").write_bytes(b"P5\nnot a header\n")
        code = run(["extract-mv", str(frames), "--out", str(tmp_path / "x.hift")])
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_too_few_frames(self, tmp_path):
        frames = tmp_path / "frames"
        frames.mkdir()
        write_pnm(frames / "a.pgm", np.zeros((64, 64), np.uint8))
        assert run(["extract-mv", str(frames), "--out", str(tmp_path / "x.hift")]) == 2


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    cfg = {
        "task": "direction_memory", "h": 2, "n": 8, "steps": 8,
        "batch_size": 2, "episodes": 4, "seed": 5,
        "mode": "expert_conditioned", "lambda": 0.01,
        "out_dir": str(out / "run"),
    }
    cfg_path = out / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    assert run(["train", "--config", str(cfg_path)]) == 0
    return out / "run" / "checkpoint.hift", cfg_path


class TestTrainEval:
    def test_train_writes_checkpoint_and_log(self, trained):
        ckpt, _ = trained
        assert ckpt.exists()
        assert (ckpt.parent / "train_log.txt").exists()

    def test_missing_config_exit_2(self):
        assert run(["train", "--config", "/nonexistent/cfg.json"]) == 2

    def test_unknown_config_key_exit_2(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"steps": 3, "typo_key": 1}))
        assert run(["train", "--config", str(p)]) == 2

    def test_seed_repeat_identical_checkpoint_bytes(self, tmp_path):
        cfg = {
            "task": "direction_memory", "h": 2, "steps": 6, "batch_size": 2,
            "episodes": 4, "seed": 9, "deterministic": True,
        }
        p = tmp_path / "cfg.json"
        outs = []
        for name in ("r1", "r2"):
            cfg["out_dir"] = str(tmp_path / name)
            p.write_text(json.dumps(cfg))
            assert run(["--deterministic", "train", "--config", str(p)]) == 0
            outs.append((tmp_path / name / "checkpoint.hift").read_bytes())
        assert outs[0] == outs[1]

    def test_eval_report(self, trained, tmp_path):
        ckpt, _ = trained
        report_path = tmp_path / "report.json"
        assert run(["eval", "--checkpoint", str(ckpt), "--trials", "4",
                    "--out", str(report_path)]) == 0
        report = json.loads(report_path.read_text())
        assert 0.0 <= report["success_rate"] <= 1.0
        assert report["trials"] == 4
        assert "latency_ms" in report and "backbone_tokens" in report
        assert "mean_losses" in report

    def test_eval_task_mismatch(self, trained):
        ckpt, _ = trained
        assert run(["eval", "--checkpoint", str(ckpt), "--task", "press_order",
                    "--trials", "2"]) == 2

    def test_eval_bad_checkpoint(self, tmp_path):
        bad = tmp_path / "bad.hift"
        bad.write_bytes(b"garbage")
        assert run(["eval", "--checkpoint", str(bad), "--trials", "1"]) == 2


class TestSweep:
    def _cfg(self, tmp_path, **kw):
        cfg = {
            "task": "direction_memory", "h": 2, "steps": 4, "batch_size": 2,
            "episodes": 4, "seed": 1, "out_dir": str(tmp_path / "runs"),
        }
        cfg.update(kw)
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(cfg))
        return p

    def test_hindsight_sweep_cardinality(self, tmp_path):
        p = self._cfg(tmp_path)
        out = tmp_path / "sweep_h"
        assert run(["sweep", "--config", str(p), "--kind", "hindsight",
                    "--h", "1,2,4,8,16", "--trials", "2",
                    "--train-steps", "2", "--out", str(out)]) == 0
        rows = json.loads(out.with_suffix(".json").read_text())
        assert [r["h"] for r in rows] == [1, 2, 4, 8, 16]
        assert out.with_suffix(".csv").exists()
        assert out.with_suffix(".png").stat().st_size > 0
        # constant backbone width in the conditioned mode
        assert len({r["backbone_tokens"] for r in rows}) == 1

    def test_mode_sweep(self, tmp_path):
        p = self._cfg(tmp_path)
        out = tmp_path / "sweep_m"
        assert run(["sweep", "--config", str(p), "--kind", "modes",
                    "--modes", "expert_conditioned,vlm_injected",
                    "--trials", "2", "--train-steps", "2", "--out", str(out)]) == 0
        rows = json.loads(out.with_suffix(".json").read_text())
        assert {r["mode"] for r in rows} == {"expert_conditioned", "vlm_injected"}
        assert all("success_rate" in r for r in rows)

    def test_joint_comparison(self, tmp_path):
        p = self._cfg(tmp_path)
        out = tmp_path / "sweep_j"
        assert run(["sweep", "--config", str(p), "--kind", "joint",
                    "--out", str(out)]) == 0
        curves = json.loads(out.with_suffix(".json").read_text())
        assert set(curves) == {"joint", "motion_only"}
        assert out.with_suffix(".png").exists() and out.with_suffix(".csv").exists()


class TestGradcheckCommand:
    def test_ops_scope_passes(self, capsys):
        assert run(["gradcheck", "ops"]) == 0
        assert "passed" in capsys.readouterr().out
