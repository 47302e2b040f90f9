import json
from pathlib import Path

import numpy as np
import pytest

from panofuse.dataset_io import (
    FrameRecord,
    encode_depth,
    encode_embedding_b64,
    filter_blurry,
    load_category_table,
    load_manifest,
    parse_category_table,
)
from panofuse.errors import (
    BadEmbedding,
    CorruptBlob,
    DuplicateCategoryName,
    EmbeddingDimMismatch,
    IndexOutOfRange,
    InvariantViolation,
    MissingField,
    SchemaVersionUnsupported,
)
from panofuse.synth import CLEAN, NoiseProfile, SynthScene, make_corpus, orbit_trajectory

from conftest import couch_scene_spec


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    scene = SynthScene(couch_scene_spec(room_detections=True))
    traj = orbit_trajectory([1.5, 1.5, 0.4], radius=1.1, height=0.5, frames=3)
    root = tmp_path_factory.mktemp("ds")
    manifest = make_corpus(scene, traj, CLEAN, root / "corpus")
    return manifest, traj


def _edit_manifest(manifest_path, mutate, tmp_path, name="edited"):
    root = Path(manifest_path).parent
    data = json.loads(Path(manifest_path).read_text())
    mutate(data)
    import shutil

    dst = tmp_path / name
    shutil.copytree(root, dst)
    (dst / "manifest.json").write_text(json.dumps(data))
    return dst / "manifest.json"


class TestLoadManifest:
    def test_frame_count_echoed(self, corpus):
        manifest, _ = corpus
        ds = load_manifest(manifest)
        assert ds.frame_count == 3
        assert ds.embedding_dim == 16
        assert len(ds.category_table) == 4  # couch + floor/ceiling/wall

    def test_missing_depth_scale(self, corpus, tmp_path):
        manifest, _ = corpus

        def drop(d):
            del d["depth"]["scale"]

        path = _edit_manifest(manifest, drop, tmp_path)
        with pytest.raises(MissingField) as err:
            load_manifest(path)
        assert err.value.field == "depth_scale"

    def test_unsupported_schema_version(self, corpus, tmp_path):
        manifest, _ = corpus
        path = _edit_manifest(
            manifest, lambda d: d.update(schema_version=99), tmp_path, "v99"
        )
        with pytest.raises(SchemaVersionUnsupported):
            load_manifest(path)

    def test_embedding_dim_mismatch(self, corpus, tmp_path):
        manifest, _ = corpus
        path = _edit_manifest(
            manifest, lambda d: d.update(embedding_dim=384), tmp_path, "dim"
        )
        with pytest.raises(EmbeddingDimMismatch):
            load_manifest(path)


class TestLoadFrame:
    def test_generator_pose_round_trips_bit_exact(self, corpus):
        manifest, traj = corpus
        ds = load_manifest(manifest)
        frame = ds.load_frame(0)
        assert np.array_equal(frame.pose.matrix, traj[0].matrix)

    def test_index_out_of_range(self, corpus):
        manifest, _ = corpus
        ds = load_manifest(manifest)
        with pytest.raises(IndexOutOfRange):
            ds.load_frame(3)

    def test_non_unit_embedding_rejected(self, corpus, tmp_path):
        manifest, _ = corpus

        def corrupt(d):
            half = encode_embedding_b64(np.full(16, 0.125))  # norm 0.5
            d["frames"][0]["detections"][0]["embedding"] = {"b64": half}

        path = _edit_manifest(manifest, corrupt, tmp_path, "emb")
        ds = load_manifest(path)
        with pytest.raises(InvariantViolation):
            ds.load_frame(0)

    def test_truncated_depth_blob(self, corpus, tmp_path):
        manifest, _ = corpus
        path = _edit_manifest(manifest, lambda d: None, tmp_path, "trunc")
        depth_rel = json.loads(path.read_text())["frames"][0]["depth_path"]
        blob_path = path.parent / depth_rel
        blob_path.write_bytes(blob_path.read_bytes()[:-10])
        ds = load_manifest(path)
        with pytest.raises(CorruptBlob):
            ds.load_frame(0)

    def test_depth_decoded_to_meters(self, corpus):
        manifest, _ = corpus
        ds = load_manifest(manifest)
        frame = ds.load_frame(1)
        pos = frame.depth[frame.depth > 0]
        assert pos.min() > 0 and pos.max() <= 20.0

    def test_blob_round_trip_byte_identical(self, corpus):
        manifest, _ = corpus
        ds = load_manifest(manifest)
        data = json.loads(Path(manifest).read_text())
        for i in range(ds.frame_count):
            frame = ds.load_frame(i)
            entry = data["frames"][i]
            on_disk = (Path(manifest).parent / entry["depth_path"]).read_bytes()
            assert encode_depth(frame.depth, ds.depth_scale) == on_disk
            emb_blob = (Path(manifest).parent / "embeddings.bin").read_bytes()
            for det, djson in zip(frame.detections, entry["detections"]):
                ref = djson["embedding"]
                stored = emb_blob[ref["offset"] : ref["offset"] + 4 * 16]
                assert np.asarray(det.embedding, dtype="<f4").tobytes() == stored


class TestFilterBlurry:
    def _frames(self, flags):
        return [
            FrameRecord(
                index=i,
                rgb_path=None,
                depth_path="",
                depth_scale=0.001,
                intrinsics=None,
                pose=None,
                detections=[],
                blurry=b,
                depth=None,
            )
            for i, b in enumerate(flags)
        ]

    def test_drops_flagged_keeps_order(self):
        frames = self._frames([True, False, True])
        out = filter_blurry(frames)
        assert [f.index for f in out] == [1]

    def test_identity_when_all_sharp(self):
        frames = self._frames([False] * 4)
        assert filter_blurry(frames) == frames

    def test_idempotent(self):
        frames = self._frames([True, False, False, True, False])
        once = filter_blurry(frames)
        assert filter_blurry(once) == once

    def test_flag_fraction_matches_corpus(self, tmp_path):
        # Fixture with a known flagged subset: output length drops by exactly
        # the number of flags.
        scene = SynthScene(couch_scene_spec())
        traj = orbit_trajectory([1.5, 1.5, 0.4], radius=1.1, height=0.5, frames=33)
        manifest = make_corpus(
            scene, traj, NoiseProfile(blur_rate=0.06), tmp_path / "blur"
        )
        ds = load_manifest(manifest)
        frames = [ds.load_frame(i) for i in range(ds.frame_count)]
        flagged = sum(f.blurry for f in frames)
        assert flagged > 0
        assert len(filter_blurry(frames)) == len(frames) - flagged


class TestCategoryTable:
    def _entries(self, names, dim=4):
        rows = []
        for i, name in enumerate(names):
            vec = np.zeros(dim)
            vec[i % dim] = 1.0
            rows.append(
                {
                    "id": i,
                    "name": name,
                    "kind": "thing",
                    "size_class": "Medium",
                    "embedding": vec.tolist(),
                }
            )
        return rows

    def test_toy_table_loads(self, tmp_path):
        path = tmp_path / "cats.json"
        path.write_text(json.dumps(self._entries(["a", "b", "c"])))
        table = load_category_table(path)
        assert table.embedding_dim == 4
        assert [c.name for c in table.categories] == ["a", "b", "c"]

    def test_duplicate_name_rejected(self, tmp_path):
        path = tmp_path / "cats.json"
        path.write_text(json.dumps(self._entries(["chair", "chair"])))
        with pytest.raises(DuplicateCategoryName):
            load_category_table(path)

    def test_near_unit_embedding_renormalized(self):
        rows = self._entries(["a"])
        rows[0]["embedding"] = [1.0005, 0.0, 0.0, 0.0]
        table = parse_category_table(rows)
        assert np.linalg.norm(table.get(0).embedding) == pytest.approx(1.0, abs=1e-12)

    def test_far_from_unit_rejected(self):
        rows = self._entries(["a"])
        rows[0]["embedding"] = [0.5, 0.0, 0.0, 0.0]
        with pytest.raises(BadEmbedding):
            parse_category_table(rows)

    def test_full_171_entry_table(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = []
        sizes = ["Small", "Medium", "Large"]
        for i in range(171):
            vec = rng.normal(size=64)
            vec /= np.linalg.norm(vec)
            rows.append(
                {
                    "id": i,
                    "name": f"class_{i:03d}",
                    "kind": "thing" if i < 80 else "stuff",
                    "size_class": sizes[i % 3],
                    "embedding": vec.tolist(),
                }
            )
        path = tmp_path / "coco.json"
        path.write_text(json.dumps(rows))
        table = load_category_table(path)
        assert len(table) == 171
        assert {c.size_class for c in table.categories} == set(sizes)
