"""Smoke test for the porosgp Python extension.

Build and install first, e.g.
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/porosgp-*.whl
then run ``python python/smoke_test.py``.
"""

import json
import math
import tempfile
from pathlib import Path

import porosgp_py as pg


def symmetric(m, tol=1e-10):
    return all(abs(m[i][j] - m[j][i]) <= tol for i in range(len(m)) for j in range(i))


def main():
    # a closed void: no drained flow, stiffness below the solid
    sphere = pg.homogenize_cell("SphereVoid", [0.3], resolution=8)
    assert symmetric(sphere["A"])
    assert all(abs(v) < 1e-8 for row in sphere["K"] for v in row)
    assert 0.0 < sphere["porosity"] < 0.2
    assert sphere["A"][0][0] < pg.homogenize_cell("SphereVoid", [0.1], resolution=8)["A"][0][0]

    cross = pg.homogenize_cell("Cross3D", [0.15, 0.15], resolution=8)
    assert min(cross["K"][i][i] for i in range(3)) > 0.0

    try:
        pg.homogenize_cell("Hexagon", [0.1])
    except ValueError:
        pass
    else:
        raise AssertionError("unknown cell type accepted")

    with tempfile.TemporaryDirectory() as tmp:
        cfg = json.loads(pg.default_config())
        cfg["catalogue"]["build"].update(
            resolution=8, volume_resolution=32, cross_nodes=[3, 3], sphere_nodes=4
        )
        cfg["output"]["dir"] = str(Path(tmp) / "cat")
        path = pg.homogenize(json.dumps(cfg))
        cat = pg.Catalogue(path)
        assert cat.cell_types() == ["Cross3D", "SphereVoid"]
        point = cat.interpolate("SphereVoid", [0.25])
        assert 0.0 < point["rho"] < 1.0 and point["label"] == [-1.0, -1.0, -1.0]

        cfg["catalogue"]["path"] = str(path)
        cfg["cell_types"] = ["Cross3D", "SphereVoid"]
        cfg["mesh"] = {"nx": 4, "ny": 3, "nz": 1, "h": [1.0, 1.0, 1.0]}
        for key, lo, hi in (("traction_patches", 3.0, None), ("inflow", None, 1.0), ("outflow", 3.0, None)):
            patch = cfg["boundary"][key][0]
            patch["min"][0], patch["max"][0] = lo, hi
        cfg["design_grid"] = {"cross_radii": [5, 5], "angles": 4, "sphere_radii": 6}
        cfg["optimizer"]["k_max"] = 5
        cfg["output"]["dir"] = str(Path(tmp) / "run")
        summary = pg.optimize(json.dumps(cfg))
        assert math.isfinite(summary["Phi"]) and summary["Phi"] > 0.0
        assert summary["iterations"] <= 5, summary
        rows = (Path(tmp) / "run" / "history.csv").read_text().splitlines()[2:]
        merit = [float(r.split(",")[1]) for r in rows]
        assert all(b <= a for a, b in zip(merit, merit[1:])), merit

        report = pg.check(json.dumps(cfg))
        failed = [name for name, passed, _, _ in report if not passed]
        assert not failed, failed

    print("porosgp_py smoke test passed")


if __name__ == "__main__":
    main()
