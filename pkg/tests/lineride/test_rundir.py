from __future__ import annotations

import os

from pytest import raises

from rail.lineride import rundir
from rail.lineride.rundir import RunDirectory, RunManifest


class TestRunDirectory:
    def test_init(self, tmp_path):
        with raises(FileNotFoundError):
            RunDirectory(tmp_path / "not_existing")

        # flag file does not exist
        with raises(FileNotFoundError):
            RunDirectory(tmp_path)

    def test_create(self, tmp_path):
        inst = RunDirectory.create(tmp_path / "not_existing")
        assert RunDirectory.is_valid(inst.path)

        with raises(FileExistsError):
            RunDirectory.create(tmp_path)

    def test_overwrite(self, tmp_path):
        path = tmp_path / "run"
        RunDirectory.create(path)
        dummy_path = path / "guideline.json"
        with open(dummy_path, "w"):
            pass

        assert RunDirectory._flag_path in set(os.listdir(path))  # pylint: disable=W0212
        RunDirectory.create(path, overwrite=True)
        assert not dummy_path.exists()

        # regular directories are never overwritten
        path = tmp_path / "my_precious_data"
        path.mkdir()
        with raises(OSError):
            RunDirectory.create(path, overwrite=True)

    def test_drop(self, tmp_path):
        path = tmp_path / "run"
        inst = RunDirectory.create(path)
        assert str(path) in str(inst)
        assert inst.file("trace.csv") == os.path.join(str(path), "trace.csv")
        inst.drop()
        assert not path.exists()


class TestRunManifest:
    def test_round_trip(self, tmp_path):
        run = RunDirectory.create(tmp_path / "run")
        with raises(FileNotFoundError):
            run.read_manifest()

        manifest = RunManifest(
            "train",
            arguments=dict(total_steps=64, preset="mini-hop"),
            config_paths=dict(env="env.yml"),
            seed=7,
        )
        run.write_manifest(manifest)
        restored = run.read_manifest()
        assert restored == manifest
        assert restored.output_dir == run.path

    def test_versions(self):
        manifest = RunManifest("eval")
        assert set(manifest.versions) == {"rail-lineride", "numpy", "scipy", "torch", "gymnasium"}
        assert manifest.version == rundir.MANIFEST_VERSION

    def test_version_check(self):
        text = RunManifest("trace").to_json().replace(
            f'"version": {rundir.MANIFEST_VERSION}', '"version": 99'
        )
        with raises(ValueError, match="version"):
            RunManifest.from_json(text)
