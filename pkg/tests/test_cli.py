import json
import subprocess
import sys
from pathlib import Path

import pytest

from bevkit.cli import main
from bevkit.scenemodel import load_scene, validate_scene


def _tree_bytes(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestSynthCommand:
    def test_single_scene_file(self, tmp_path):
        out = tmp_path / "s.json"
        assert main(["synth", "--layout", "four_way", "--n", "4", "--seed", "7", "-o", str(out)]) == 0
        scene = load_scene(out)
        validate_scene(scene)
        assert len(scene.tracks) == 4
        assert Path(str(out).replace(".json", ".gt.json")).exists()

    def test_count_writes_directory(self, tmp_path):
        out = tmp_path / "scenes"
        assert main(["synth", "--layout", "mixed", "--n", "2", "--seed", "1", "--count", "5", "-o", str(out)]) == 0
        files = [p for p in out.glob("*.json") if not p.name.endswith(".gt.json")]
        assert len(files) == 5

    def test_capacity_error_exit_code(self, tmp_path):
        rc = main(["synth", "--layout", "t_junction", "--n", "99", "--seed", "1", "-o", str(tmp_path / "x.json")])
        assert rc == 1


class TestExitCodes:
    def test_usage_error_is_64(self):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--layout", "four_way"])  # missing required flags
        assert exc.value.code == 64

    def test_unknown_subcommand_is_64(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 64

    def test_missing_input_is_2(self, tmp_path):
        rc = main(["annotate", "-i", str(tmp_path / "missing.json"), "-o", str(tmp_path / "out.jsonl")])
        assert rc == 2

    def test_invalid_scene_is_1(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"schema_version": 1, "scene_id": "x"}), encoding="utf-8")
        rc = main(["annotate", "-i", str(bad), "-o", str(tmp_path / "out.jsonl")])
        assert rc == 1


class TestPipeline:
    @pytest.fixture()
    def scenes_dir(self, tmp_path):
        out = tmp_path / "scenes"
        assert main(["synth", "--layout", "mixed", "--n", "3", "--seed", "11", "--count", "5", "-o", str(out)]) == 0
        return out

    def test_annotate_render_genqa(self, tmp_path, scenes_dir):
        ann = tmp_path / "ann.jsonl"
        renders = tmp_path / "renders"
        qa = tmp_path / "qa.jsonl"
        assert main(["annotate", "-i", str(scenes_dir), "-o", str(ann)]) == 0
        assert main(["render", "-i", str(scenes_dir), "-o", str(renders), "--stride", "30"]) == 0
        assert main(["genqa", "-i", str(scenes_dir), "-r", str(renders), "-a", str(ann), "-o", str(qa), "--seed", "3"]) == 0
        rows = [json.loads(l) for l in qa.read_text().splitlines()]
        assert rows
        pngs = {p.name for p in renders.glob("*.png")}
        assert {r["image"] for r in rows} <= pngs

    def test_genqa_without_annotations(self, tmp_path, scenes_dir):
        renders = tmp_path / "renders"
        qa = tmp_path / "qa.jsonl"
        assert main(["render", "-i", str(scenes_dir), "-o", str(renders), "--stride", "30"]) == 0
        assert main(["genqa", "-i", str(scenes_dir), "-r", str(renders), "-o", str(qa), "--seed", "3"]) == 0
        assert qa.read_text().splitlines()

    def test_stats_to_stdout(self, tmp_path, scenes_dir, capsys):
        renders = tmp_path / "renders"
        qa = tmp_path / "qa.jsonl"
        main(["render", "-i", str(scenes_dir), "-o", str(renders), "--stride", "30"])
        main(["genqa", "-i", str(scenes_dir), "-r", str(renders), "-o", str(qa), "--seed", "3"])
        assert main(["stats", "-i", str(qa)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["total_questions"] > 0

    def test_perturb_modes(self, tmp_path, scenes_dir):
        for mode in ("vehicle", "lane", "combined"):
            out = tmp_path / f"noisy_{mode}"
            assert main(["perturb", "-i", str(scenes_dir), "-o", str(out), "--mode", mode, "--rate", "0.2", "--seed", "4"]) == 0
            for p in out.glob("*.json"):
                validate_scene(load_scene(p))

    def test_rollout_and_eval_traj(self, tmp_path, scenes_dir, capsys):
        roll = tmp_path / "roll.json"
        assert main(["rollout", "-i", str(scenes_dir), "-o", str(roll)]) == 0
        assert main(["eval-traj", "-i", str(roll), "--scenes", str(scenes_dir)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert set(report) >= {"mADE", "minADE", "mFDE", "minFDE", "SCR"}
        assert report["minADE"] <= report["mADE"] + 1e-12

    def test_eval_traj_without_scenes_omits_scr(self, tmp_path, scenes_dir, capsys):
        roll = tmp_path / "roll.json"
        assert main(["rollout", "-i", str(scenes_dir), "-o", str(roll)]) == 0
        assert main(["eval-traj", "-i", str(roll)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert "SCR" not in report
        assert "mADE" in report

    def test_eval_traj_zero_for_gt_rollouts(self, tmp_path, scenes_dir, capsys):
        # hand-build a rollouts file whose samples equal the ground truth
        roll = tmp_path / "roll.json"
        assert main(["rollout", "-i", str(scenes_dir), "-o", str(roll)]) == 0
        payload = json.loads(roll.read_text())
        for sc in payload["scenarios"]:
            for veh in sc["vehicles"]:
                veh["samples"] = [veh["gt"]]
        roll.write_text(json.dumps(payload), encoding="utf-8")
        assert main(["eval-traj", "-i", str(roll)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["mADE"] == 0.0
        assert report["minFDE"] == 0.0

    def test_eval_qa_round_trip(self, tmp_path, scenes_dir, capsys):
        renders = tmp_path / "renders"
        qa = tmp_path / "qa.jsonl"
        main(["render", "-i", str(scenes_dir), "-o", str(renders), "--stride", "30"])
        main(["genqa", "-i", str(scenes_dir), "-r", str(renders), "-o", str(qa), "--seed", "3"])
        preds = tmp_path / "preds.jsonl"
        with preds.open("w") as fh:
            for line in qa.read_text().splitlines():
                row = json.loads(line)
                fh.write(json.dumps({"qa_id": row["qa_id"], "answer": row["answer"]}) + "\n")
        assert main(["eval-qa", "-d", str(qa), "-p", str(preds)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["overall"] == 1.0

    def test_balance_split_stats_chain(self, tmp_path, scenes_dir):
        renders = tmp_path / "renders"
        qa = tmp_path / "qa.jsonl"
        main(["render", "-i", str(scenes_dir), "-o", str(renders), "--stride", "30"])
        main(["genqa", "-i", str(scenes_dir), "-r", str(renders), "-o", str(qa), "--seed", "3"])
        bal = tmp_path / "bal.jsonl"
        assert main(["balance", "-i", str(qa), "-o", str(bal), "--seed", "5"]) == 0
        splits = tmp_path / "splits"
        assert main(["split", "-i", str(bal), "-o", str(splits), "--seed", "6"]) == 0
        train = (splits / "train.jsonl").read_text().splitlines()
        test = (splits / "test.jsonl").read_text().splitlines()
        assert len(train) + len(test) == len(bal.read_text().splitlines())
        train_imgs = {json.loads(l)["image"] for l in train}
        test_imgs = {json.loads(l)["image"] for l in test}
        assert train_imgs.isdisjoint(test_imgs)

    def test_export_cond(self, tmp_path, scenes_dir):
        scene_file = sorted(p for p in scenes_dir.glob("*.json") if not p.name.endswith(".gt.json"))[0]
        out = tmp_path / "cond"
        assert main(["export-cond", "-i", str(scene_file), "-o", str(out), "--t0", "10"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert set(manifest["arrays"]) == {"history", "global_understanding", "navigation", "navigation_valid"}
        for meta in manifest["arrays"].values():
            assert (out / meta["file"]).exists()


class TestDeterminismSmall:
    def test_rerun_byte_identical_with_jobs(self, tmp_path):
        results = []
        for run, jobs in (("a", "1"), ("b", "4")):
            base = tmp_path / run
            base.mkdir()
            assert main(["synth", "--layout", "mixed", "--n", "2", "--seed", "3", "--count", "4", "-o", str(base / "scenes")]) == 0
            assert main(["annotate", "-i", str(base / "scenes"), "-o", str(base / "ann.jsonl"), "--jobs", jobs]) == 0
            assert main(["render", "-i", str(base / "scenes"), "-o", str(base / "renders"), "--stride", "30", "--jobs", jobs]) == 0
            assert main(["genqa", "-i", str(base / "scenes"), "-r", str(base / "renders"), "-a", str(base / "ann.jsonl"), "-o", str(base / "qa.jsonl"), "--seed", "5", "--jobs", jobs]) == 0
            results.append(_tree_bytes(base))
        assert results[0] == results[1]


class TestEnvConfig:
    def test_bevkit_config_rate(self, tmp_path, monkeypatch):
        scenes = tmp_path / "scenes"
        main(["synth", "--layout", "straight_road", "--n", "4", "--seed", "2", "--count", "2", "-o", str(scenes)])
        renders = tmp_path / "renders"
        main(["render", "-i", str(scenes), "-o", str(renders), "--stride", "30"])
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"rate": 2.0}), encoding="utf-8")
        monkeypatch.setenv("BEVKIT_CONFIG", str(cfg))
        qa = tmp_path / "qa.jsonl"
        assert main(["genqa", "-i", str(scenes), "-r", str(renders), "-o", str(qa), "--seed", "3"]) == 0
        rows = [json.loads(l) for l in qa.read_text().splitlines()]
        images = {r["image"] for r in rows}
        assert len(rows) / len(images) <= 2.5

    def test_invalid_config_is_error(self, tmp_path, monkeypatch):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("[1, 2]", encoding="utf-8")
        monkeypatch.setenv("BEVKIT_CONFIG", str(cfg))
        qa = tmp_path / "qa.jsonl"
        rc = main(["balance", "-i", str(qa), "-o", str(qa), "--seed", "1"])
        assert rc == 1


class TestConsoleScript:
    def test_module_invocation(self):
        proc = subprocess.run(
            [sys.executable, "-m", "bevkit.cli", "--version"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert "bevkit" in proc.stdout
