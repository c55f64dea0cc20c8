import subprocess
import sys

import numpy as np
import pytest

from superalign.cli import main
from superalign.geom import PointCloud, Se3Transform
from superalign.io import read_cloud, read_pose, write_cloud, write_pose
from superalign.metrics import rre, rte
from superalign.synthetic import SyntheticPairSpec, generate_synthetic_pair


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    x, y, gt = generate_synthetic_pair(SyntheticPairSpec(point_count=800, seed=11))
    write_cloud(x, d / "x.ply")
    write_cloud(y, d / "y.xyz")
    write_pose(gt, d / "gt.txt")
    return d, gt


def test_eval_identical_poses(files, capsys):
    d, _ = files
    assert main(["eval", "--est", str(d / "gt.txt"), "--gt", str(d / "gt.txt")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out == ["rre 0.000000", "rte 0.000000"]


def test_register_then_eval(files, capsys):
    d, gt = files
    code = main(["register", "--source", str(d / "x.ply"), "--target", str(d / "y.xyz"),
                 "--out-pose", str(d / "est.txt"), "--out-report", str(d / "rep.json")])
    assert code == 0
    est = read_pose(d / "est.txt")
    assert rre(est, gt) < 0.5 and rte(est, gt) < 0.01 * read_cloud(d / "x.ply").diameter()
    assert main(["eval", "--est", str(d / "est.txt"), "--gt", str(d / "gt.txt"),
                 "--source", str(d / "x.ply"), "--target", str(d / "y.xyz")]) == 0
    lines = dict(ln.split() for ln in capsys.readouterr().out.splitlines())
    assert set(lines) == {"rre", "rte", "chamfer", "inlier_ratio"}
    assert float(lines["inlier_ratio"]) == 1.0


def test_register_to_stdout_with_overrides(files, capsys):
    d, gt = files
    code = main(["register", "--source", str(d / "x.ply"), "--target", str(d / "y.xyz"),
                 "--estimator", "ransac", "--set", "ransac.max_iterations=500"])
    assert code == 0
    m = np.array([[float(v) for v in ln.split()] for ln in capsys.readouterr().out.splitlines()])
    assert rre(Se3Transform(m[:3, :3], m[:3, 3]), gt) < 0.5


def test_match_writes_csv(files, capsys):
    d, _ = files
    assert main(["match", "--source", str(d / "x.ply"), "--target", str(d / "y.xyz"),
                 "--top-fraction", "0.1"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "src_idx,dst_idx,weight" and len(out) > 10


def test_missing_file_exits_2_and_names_it(files, capsys):
    d, _ = files
    assert main(["register", "--source", str(d / "absent.ply"), "--target", str(d / "y.xyz")]) == 2
    assert "absent.ply" in capsys.readouterr().err


def test_bad_override_exits_2(files, capsys):
    d, _ = files
    assert main(["register", "--source", str(d / "x.ply"), "--target", str(d / "y.xyz"),
                 "--set", "voxel_size"]) == 2
    assert main(["register", "--source", str(d / "x.ply"), "--target", str(d / "y.xyz"),
                 "--set", "nope=1"]) == 2


def test_unregistrable_pair_exits_1(tmp_path, capsys):
    write_cloud(PointCloud(np.array([[0.0, 0, 0], [1, 0, 0]])), tmp_path / "a.xyz")
    code = main(["register", "--source", str(tmp_path / "a.xyz"), "--target", str(tmp_path / "a.xyz")])
    assert code == 1
    assert "registration failed" in capsys.readouterr().err


def test_demo_fit_csv(capsys):
    assert main(["demo-fit", "--seed", "0", "--steps", "3", "--superpoints", "16"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "step,loss,rre_deg" and len(out) == 5


def test_module_entry_point_rejects_unknown_flag():
    p = subprocess.run([sys.executable, "-m", "superalign", "register", "--source", "a", "--target", "b", "--bogus"],
                       capture_output=True, text=True)
    assert p.returncode == 2 and "unrecognized" in p.stderr
