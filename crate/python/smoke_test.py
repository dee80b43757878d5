"""Builds the extension module and exercises it once.

    python3 python/smoke_test.py            # builds with cargo first
    python3 python/smoke_test.py --no-build # reuse target/release
"""

import argparse
import importlib
import shutil
import subprocess
import sys
import sysconfig
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module(build: bool, workdir: Path):
    if build:
        subprocess.run(
            ["cargo", "build", "--release", "-p", "twinbridge-py"], cwd=ROOT, check=True
        )
    lib = ROOT / "target" / "release" / "libpytwinbridge.so"
    if not lib.exists():
        sys.exit(f"{lib} not found; build it first")
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    shutil.copy(lib, workdir / f"pytwinbridge{suffix}")
    sys.path.insert(0, str(workdir))
    return importlib.import_module("pytwinbridge")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--no-build", action="store_true")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        tb = load_module(not args.no_build, tmp)

        tree = tb.KdTree([(0.0, 0.0), (3.0, 4.0), (1.0, 1.0), (3.0, 4.0)])
        assert len(tree) == 4
        assert [i for i, _ in tree.nearest(3.0, 4.0, 3)] == [1, 3, 2]
        assert tree.nearest(0.0, 0.0, 1) == [(0, 0.0)]

        assert tb.latest_cycle("2024-01-15T13:30Z") == "20240115T12Z"
        assert tb.latest_cycle("2024-01-15T13:30Z", delay_hours=3) == "20240115T06Z"
        url = tb.forecast_url("20240115T06Z", ["x_wind_10m"], 100, 200)
        assert url == (
            "https://thredds.met.no/thredds/dodsC/mepslatest/meps_lagged_6_h_vc_2_5km_"
            "20240115T06Z.ncml.ascii?x_wind_10m%5B0:1:60%5D%5B0:1:0%5D%5B0:1:0%5D"
            "%5B100:1:100%5D%5B200:1:200%5D"
        ), url

        body = "x_wind_10m, [61][1][1][1][1]\n" + "".join(
            f"[{i}][0][0][0], {i * 0.5}\n" for i in range(61)
        )
        [(name, leads, values)] = tb.parse_forecast(body, "20240115T06Z", ["x_wind_10m"], 0, 0)
        assert name == "x_wind_10m" and leads == list(range(61)) and values[-1] == 30.0
        try:
            tb.parse_forecast(body, "20240115T07Z", ["x_wind_10m"], 0, 0)
        except ValueError:
            pass
        else:
            raise AssertionError("hour 07 accepted as a cycle")

        scene = tmp / "scene"
        files = tb.generate_sample(str(scene), size=64, seed=1)
        assert any(Path(f).name == "raster.asc" for f in files)

        recs = tb.load_telemetry(str(scene / "telemetry.csv"), "turbine1")
        assert len(recs) == 100 and recs[0]["values"]["wind_speed"] == 7.2

        summary = tb.build_terrain(
            str(scene / "raster.asc"),
            str(scene / "contours.csv"),
            str(tmp / "tiles"),
            color=str(scene / "color.png"),
            tile_size=32,
        )
        assert summary["tiles"] == 4 and (summary["rows"], summary["cols"]) == (2, 2)
        assert (tmp / "tiles" / "index.txt").exists()
        try:
            tb.build_terrain(str(scene / "raster.asc"), str(tmp / "missing.csv"), str(tmp / "x"))
        except ValueError as e:
            assert "missing.csv" in str(e)
        else:
            raise AssertionError("missing contours accepted")

    print("pytwinbridge smoke test passed")


if __name__ == "__main__":
    main()
