import numpy as np
import pytest

import oracles
from conftest import full_keypoints
from presspose.annotation import (
    MANUAL,
    PROPAGATED,
    AnnotationStore,
    KeypointSet,
    load_annotations,
    save_annotations,
    visibility_mask,
)
from presspose.errors import NoSeedAnnotationError, ValidationError
from presspose.pressure import GRID_HEIGHT, GRID_WIDTH, PressureFrame, PressureSequence

SIZE = (64, 32)


def seq_from_stacks(stacks, subject=1, posture=1):
    frames = tuple(PressureFrame(v, t) for t, v in enumerate(stacks))
    return PressureSequence(frames, subject, posture)


def grid(**cells):
    values = np.zeros((GRID_HEIGHT, GRID_WIDTH), dtype=np.float32)
    for key, v in cells.items():
        y, x = (int(s) for s in key[1:].split("_"))
        values[y, x] = v
    return values


class TestPut:
    def test_insert_manual_record(self):
        store = AnnotationStore(SIZE)
        ks = KeypointSet.create((1, 1, 0), {"head": (20.0, 10.0)})
        store.put(ks)
        assert len(store) == 1
        assert store.provenance((1, 1, 0)).kind == MANUAL

    def test_out_of_bounds_visible_point_names_part(self):
        store = AnnotationStore(SIZE)
        ks = KeypointSet.create((1, 1, 0), {"head": (-3.0, 10.0)})
        with pytest.raises(ValidationError, match="head"):
            store.put(ks)

    def test_invisible_point_not_bounds_checked(self):
        store = AnnotationStore(SIZE)
        ks = KeypointSet.create(
            (1, 1, 0), {"head": (-3.0, 10.0)}, visibility={"head": False}
        )
        store.put(ks)
        assert len(store) == 1

    def test_overwrite_keeps_store_size(self):
        store = AnnotationStore(SIZE)
        store.put(KeypointSet.create((1, 1, 0), {"head": (5.0, 5.0)}))
        store.put(KeypointSet.create((1, 1, 0), {"head": (9.0, 9.0)}))
        assert len(store) == 1
        assert store.get((1, 1, 0)).points["head"] == (9.0, 9.0)

    def test_keypointset_requires_all_parts(self):
        with pytest.raises(ValidationError, match="14 parts"):
            KeypointSet(points={"head": (1, 1)}, visibility={"head": True}, frame_ref=(1, 1, 0))


class TestVisibilityMask:
    def test_all_visible(self):
        mask = visibility_mask(full_keypoints())
        assert all(mask.values()) and len(mask) == 14

    def test_mask_is_a_copy(self):
        ks = full_keypoints()
        mask = visibility_mask(ks)
        mask["head"] = False
        assert ks.visibility["head"] is True


class TestPropagate:
    def test_identical_frames_copy_the_seed(self):
        stacks = [grid(c10_10=50.0)] * 5
        seq = seq_from_stacks(stacks)
        store = AnnotationStore(SIZE)
        seed = full_keypoints(frame_ref=(1, 1, 2))
        store.put(seed)
        added = store.propagate(seq)
        assert added == 4
        for t in range(5):
            assert store.get((1, 1, t)).points == seed.points
        assert store.provenance((1, 1, 0)).kind == PROPAGATED
        assert store.provenance((1, 1, 0)).source == (1, 1, 2)
        assert store.provenance((1, 1, 2)).kind == MANUAL

    def test_nearest_seed_wins_by_sse(self):
        frame_a = grid()
        frame_b = grid(c5_5=40.0)
        query = grid(c5_5=40.0)  # identical to B
        seq = seq_from_stacks([frame_a, query, frame_b])
        store = AnnotationStore(SIZE)
        ks_a = full_keypoints(frame_ref=(1, 1, 0), offset=0.0)
        ks_b = full_keypoints(frame_ref=(1, 1, 2), offset=3.0)
        store.put(ks_a)
        store.put(ks_b)
        store.propagate(seq)
        assert store.get((1, 1, 1)).points == ks_b.points
        assert store.provenance((1, 1, 1)).source == (1, 1, 2)

    def test_sse_tie_breaks_to_lower_source_index(self):
        frame_a = grid()  # all zero
        frame_b = grid(c0_0=2.0)
        query = grid(c0_0=1.0)  # SSE 1.0 to both
        assert oracles.sse_oracle(query, frame_a) == oracles.sse_oracle(query, frame_b)
        seq = seq_from_stacks([frame_a, query, frame_b])
        store = AnnotationStore(SIZE)
        store.put(full_keypoints(frame_ref=(1, 1, 0), offset=0.0))
        store.put(full_keypoints(frame_ref=(1, 1, 2), offset=3.0))
        store.propagate(seq)
        assert store.provenance((1, 1, 1)).source == (1, 1, 0)

    def test_matches_sse_oracle_on_random_fixture(self, rng):
        stacks = [rng.uniform(0, 100, (GRID_HEIGHT, GRID_WIDTH)).astype(np.float32) for _ in range(8)]
        seq = seq_from_stacks(stacks)
        store = AnnotationStore(SIZE)
        seeds = [0, 3, 6]
        for t in seeds:
            store.put(full_keypoints(frame_ref=(1, 1, t), offset=float(t)))
        store.propagate(seq)
        seed_frames = [(t, stacks[t]) for t in seeds]
        for t in range(8):
            if t in seeds:
                continue
            expected = oracles.propagation_source_oracle(stacks[t], seed_frames)
            assert store.provenance((1, 1, t)).source == (1, 1, expected)

    def test_idempotent(self, rng):
        stacks = [rng.uniform(0, 100, (GRID_HEIGHT, GRID_WIDTH)).astype(np.float32) for _ in range(4)]
        seq = seq_from_stacks(stacks)
        store = AnnotationStore(SIZE)
        store.put(full_keypoints(frame_ref=(1, 1, 0)))
        assert store.propagate(seq) == 3
        before = store.records()
        assert store.propagate(seq) == 0
        assert store.records() == before

    def test_manual_records_never_overwritten(self):
        stacks = [grid()] * 3
        seq = seq_from_stacks(stacks)
        store = AnnotationStore(SIZE)
        store.put(full_keypoints(frame_ref=(1, 1, 0), offset=0.0))
        manual = full_keypoints(frame_ref=(1, 1, 2), offset=5.0)
        store.put(manual)
        store.propagate(seq)
        assert store.get((1, 1, 2)).points == manual.points
        assert store.provenance((1, 1, 2)).kind == MANUAL

    def test_no_seed_raises(self):
        seq = seq_from_stacks([grid()])
        with pytest.raises(NoSeedAnnotationError):
            AnnotationStore(SIZE).propagate(seq)

    def test_deterministic(self, rng):
        stacks = [rng.uniform(0, 100, (GRID_HEIGHT, GRID_WIDTH)).astype(np.float32) for _ in range(6)]
        stores = []
        for _ in range(2):
            seq = seq_from_stacks(stacks)
            store = AnnotationStore(SIZE)
            store.put(full_keypoints(frame_ref=(1, 1, 1)))
            store.put(full_keypoints(frame_ref=(1, 1, 4), offset=2.0))
            store.propagate(seq)
            stores.append(store)
        assert stores[0].records() == stores[1].records()
        assert stores[0].provenances() == stores[1].provenances()


class TestSerialization:
    def test_json_round_trip(self, tmp_path, rng):
        stacks = [rng.uniform(0, 100, (GRID_HEIGHT, GRID_WIDTH)).astype(np.float32) for _ in range(3)]
        seq = seq_from_stacks(stacks, subject=2, posture=4)
        store = AnnotationStore(SIZE)
        store.put(full_keypoints(frame_ref=(2, 4, 0), invisible=("l_wrist",)))
        store.propagate(seq)
        path = save_annotations(store, tmp_path / "labels.json")
        loaded = load_annotations(path, SIZE)
        assert loaded.records() == store.records()
        assert loaded.provenances() == store.provenances()

    def test_schema_fields(self, tmp_path):
        import json

        store = AnnotationStore(SIZE)
        store.put(full_keypoints(frame_ref=(1, 1, 0)))
        save_annotations(store, tmp_path / "labels.json")
        objs = json.loads((tmp_path / "labels.json").read_text())
        assert objs[0]["frame"] == [1, 1, 0]
        assert objs[0]["provenance"] == "manual"
        assert set(objs[0]["points"]) == set(objs[0]["visible"])
        assert len(objs[0]["points"]) == 14
