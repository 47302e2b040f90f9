import json
from pathlib import Path

import numpy as np
import pytest

from panofuse.cli import main
from panofuse.synth import NoiseProfile, SynthScene, make_corpus, orbit_trajectory

from conftest import couch_scene_spec


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    scene = SynthScene(couch_scene_spec(room_detections=True))
    traj = orbit_trajectory([1.5, 1.5, 0.4], 1.1, 0.5, frames=4, sweep_deg=60)
    root = tmp_path_factory.mktemp("cli")
    manifest = make_corpus(
        scene, traj, NoiseProfile(synonym_cycle=True), root / "corpus"
    )
    return manifest


@pytest.fixture(scope="module")
def fused(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("maps") / "map.uppm"
    assert main(["fuse", "--manifest", str(corpus), "--out", str(out)]) == 0
    return out


def _tree_equal(a: Path, b: Path) -> bool:
    names_a = sorted(p.name for p in a.iterdir())
    names_b = sorted(p.name for p in b.iterdir())
    if names_a != names_b:
        return False
    return all((a / n).read_bytes() == (b / n).read_bytes() for n in names_a)


class TestFuse:
    def test_clean_corpus_exits_zero(self, fused):
        assert (fused / "index.json").exists()

    def test_bad_gate_value_is_usage_error(self, corpus, tmp_path):
        rc = main(
            ["fuse", "--manifest", str(corpus), "--out", str(tmp_path / "m"), "--xi-iou", "1.5"]
        )
        assert rc == 2

    def test_missing_manifest_is_usage_error(self, tmp_path):
        rc = main(["fuse", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path / "m")])
        assert rc == 2

    def test_runs_are_byte_identical(self, corpus, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["fuse", "--manifest", str(corpus), "--out", str(a)]) == 0
        assert main(["fuse", "--manifest", str(corpus), "--out", str(b)]) == 0
        assert _tree_equal(a, b)


class TestEvalGeom:
    def test_reports_written(self, corpus, fused, tmp_path):
        out = tmp_path / "report.json"
        rc = main(
            [
                "eval",
                "geom",
                "--map",
                str(fused),
                "--manifest",
                str(corpus),
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        report = json.loads(out.read_text())
        # Plumbing check only; reconstruction quality gates live in the
        # acceptance suite with a full-coverage trajectory.
        assert 0 < report["completion_ratio_pct"] <= 100
        assert report["accuracy_cm"] < 10
        assert report["chamfer_cm"] == pytest.approx(
            (report["accuracy_cm"] + report["completeness_cm"]) / 2
        )

    def test_csv_mode(self, corpus, fused, tmp_path, capsys):
        rc = main(
            [
                "eval", "geom", "--map", str(fused), "--manifest", str(corpus),
                "--out", str(tmp_path / "r.json"), "--csv",
            ]
        )
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].startswith("completeness_cm,")
        assert len(lines[1].split(",")) == len(lines[0].split(","))

    def test_missing_sidecar_exit_2(self, fused, tmp_path):
        bare = tmp_path / "bare"
        bare.mkdir()
        (bare / "manifest.json").write_text("{}")
        rc = main(
            ["eval", "geom", "--map", str(fused), "--manifest", str(bare / "manifest.json"),
             "--out", str(tmp_path / "r.json")]
        )
        assert rc == 2


class TestEvalPanoptic:
    def test_gt_as_predictions_gives_perfect_quality(self, corpus, tmp_path):
        gt_dir = Path(corpus).parent / "ground_truth"
        out = tmp_path / "pan.json"
        rc = main(
            [
                "eval", "panoptic", "--manifest", str(corpus),
                "--pred", str(gt_dir), "--out", str(out),
            ]
        )
        assert rc == 0
        rep = json.loads(out.read_text())
        assert rep["pq"] == 1.0 and rep["sq"] == 1.0 and rep["rq"] == 1.0
        assert all(v == 1.0 for v in rep["map_at"].values())

    def test_rendered_predictions_report(self, corpus, fused, tmp_path):
        out = tmp_path / "pan2.json"
        rc = main(
            ["eval", "panoptic", "--manifest", str(corpus), "--map", str(fused),
             "--out", str(out)]
        )
        assert rc == 0
        rep = json.loads(out.read_text())
        assert 0.0 <= rep["pq"] <= 1.0
        assert rep["tp"] > 0


class TestQuery:
    def test_exact_hit(self, fused, capsys):
        rc = main(["query", "--map", str(fused), "--text", "sofa", "--mode", "exact"])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 1
        hit = json.loads(lines[0])
        assert hit["score"] == 1.0 and hit["category"] == "couch"

    def test_unknown_text_empty_exit_zero(self, fused, capsys):
        rc = main(["query", "--map", str(fused), "--text", "zebra", "--mode", "exact"])
        assert rc == 0
        assert capsys.readouterr().out.strip() == ""

    def test_embedding_mode_needs_file(self, fused):
        rc = main(["query", "--map", str(fused), "--text", "sofa", "--mode", "embedding"])
        assert rc == 2

    def test_embedding_mode_with_vector(self, fused, tmp_path, capsys):
        scene = SynthScene(couch_scene_spec(room_detections=True))
        vec = scene.label_embedding("settee", scene.category_index("couch"))
        vec_file = tmp_path / "q.bin"
        vec_file.write_bytes(np.asarray(vec, dtype="<f4").tobytes())
        rc = main(
            ["query", "--map", str(fused), "--text", "settee", "--mode", "embedding",
             "--embedding-file", str(vec_file), "--k", "3"]
        )
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert 1 <= len(lines) <= 3
        assert json.loads(lines[0])["category"] == "couch"

    def test_k_limits_lines(self, fused, tmp_path, capsys):
        scene = SynthScene(couch_scene_spec(room_detections=True))
        vec = scene.label_embedding("couch", scene.category_index("couch"))
        vec_file = tmp_path / "q.bin"
        vec_file.write_bytes(np.asarray(vec, dtype="<f4").tobytes())
        rc = main(
            ["query", "--map", str(fused), "--text", "couch", "--mode", "embedding",
             "--embedding-file", str(vec_file), "--k", "2"]
        )
        assert rc == 0
        assert len(capsys.readouterr().out.strip().splitlines()) <= 2


class TestSynthCommand:
    def test_spec_to_corpus(self, tmp_path):
        spec = {
            "seed": 3,
            "embedding_dim": 16,
            "room": {"min": [0, 0, 0], "max": [3, 3, 3]},
            "intrinsics": {"fx": 70, "fy": 70, "cx": 40, "cy": 30, "width": 80, "height": 60},
            "categories": [
                {"name": "crate", "kind": "thing", "size_class": "Medium", "labels": ["crate", "box"]}
            ],
            "primitives": [
                {"shape": "box", "category": "crate", "center": [1.5, 1.5, 0.4], "size": [0.8, 0.8, 0.8]}
            ],
            "trajectory": {"type": "orbit", "target": [1.5, 1.5, 0.4], "radius": 1.1, "frames": 3},
            "noise": {"synonym_cycle": True},
        }
        spec_file = tmp_path / "scene.json"
        spec_file.write_text(json.dumps(spec))
        rc = main(["synth", "--spec", str(spec_file), "--out", str(tmp_path / "corpus")])
        assert rc == 0
        from panofuse.dataset_io import load_manifest

        ds = load_manifest(tmp_path / "corpus" / "manifest.json")
        assert ds.frame_count == 3

    def test_invalid_spec_exit_2(self, tmp_path):
        spec = {
            "room": {"min": [0, 0, 0], "max": [3, 3, 3]},
            "categories": [{"name": "crate"}],
            "primitives": [
                {"shape": "box", "category": "crate", "center": [1.5, 1.5, 0.4], "size": [0.8, 0.8, 0.8]},
                {"shape": "box", "category": "crate", "center": [1.6, 1.5, 0.4], "size": [0.8, 0.8, 0.8]},
            ],
            "trajectory": {"type": "orbit", "target": [1.5, 1.5, 0.4], "radius": 1.1, "frames": 2},
        }
        spec_file = tmp_path / "scene.json"
        spec_file.write_text(json.dumps(spec))
        rc = main(["synth", "--spec", str(spec_file), "--out", str(tmp_path / "x")])
        assert rc == 2
