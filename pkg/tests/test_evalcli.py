import csv

import numpy as np
import pytest

import rahtp
from rahtp.evalcli import (builtin_clouds, compute_metrics, main,
                           make_synthetic_cloud)


def _write_cloud(tmp_path, name="cloud.ply", count=400, depth=3, seed=1):
    cl = make_synthetic_cloud("sphere", count=count, depth=depth, seed=seed)
    path = tmp_path / name
    rahtp.save_ply(path, cl.positions, cl.attributes)
    return path, cl


def test_synthetic_cloud_deterministic_and_clipped():
    a = make_synthetic_cloud("sphere", count=500, depth=4, seed=3)
    b = make_synthetic_cloud("sphere", count=500, depth=4, seed=3)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.attributes, b.attributes)
    assert a.attributes.min() >= 0.0 and a.attributes.max() <= 255.0
    assert a.positions.max() < 16
    t = make_synthetic_cloud("torus", count=500, depth=4, seed=3)
    assert t.channels == 3
    with pytest.raises(ValueError):
        make_synthetic_cloud("plane")


def test_builtin_clouds_contents():
    clouds = builtin_clouds()
    assert set(clouds) == {"single", "pair", "sphere200"}
    assert len(clouds["pair"].positions) == 2


def test_compute_metrics_known_values():
    ref = np.array([[10.0, 0.0], [20.0, 0.0]])
    rec = np.array([[10.0, 0.0], [20.0, 5.0]])
    m = compute_metrics(ref, rec, payload_bytes=100, num_points=2,
                        coeff_count=7)
    assert m.mse == (0.0, 12.5)
    assert np.isinf(m.psnr[0])
    assert m.psnr[1] == pytest.approx(10 * np.log10(255 ** 2 / 12.5))
    assert m.bpp == pytest.approx(400.0)
    assert m.coeff_count == 7


def test_cli_encode_decode_roundtrip(tmp_path):
    path, cl = _write_cloud(tmp_path)
    bitstream = tmp_path / "out.bin"
    recon = tmp_path / "recon.ply"
    assert main(["encode", str(path), str(bitstream),
                 "--order", "2", "--mode", "critical", "--step", "0.25",
                 "--taylor-k", "32"]) == 0
    assert bitstream.stat().st_size > 0
    assert main(["decode", str(bitstream), str(path), str(recon)]) == 0
    back = rahtp.voxelize(rahtp.load_ply(recon), 3)
    assert len(back.positions) == len(cl.positions)
    # float32 PLY storage plus quantization at step 0.25
    assert np.abs(back.attributes - cl.attributes).max() < 2.0


def test_cli_rd_csv(tmp_path):
    path, _ = _write_cloud(tmp_path)
    out = tmp_path / "rd.csv"
    code = main(["rd", str(path), str(out), "--steps", "2.0", "8.0",
                 "--orders", "1", "--modes", "overcomplete",
                 "--taylor-k", "16"])
    assert code == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 2
    assert {"order", "mode", "step", "bpp", "psnr_y", "psnr_u", "psnr_v",
            "psnr_yuv"} <= set(rows[0])
    # coarser quantization cannot increase the rate
    assert float(rows[1]["bpp"]) <= float(rows[0]["bpp"])


def test_cli_compaction_csv(tmp_path):
    path, _ = _write_cloud(tmp_path)
    out = tmp_path / "comp.csv"
    assert main(["compaction", str(path), str(out), "--orders", "1", "2"]) == 0
    rows = list(csv.DictReader(open(out)))
    assert {"order", "mode", "level", "coeff_count", "mse_db"} <= set(rows[0])
    for order in ("1", "2"):
        sub = [r for r in rows if r["order"] == order]
        counts = [int(r["coeff_count"]) for r in sub]
        dbs = [float(r["mse_db"]) for r in sub]
        assert counts == sorted(counts)
        assert all(b <= a + 1e-9 for a, b in zip(dbs, dbs[1:]))


def test_cli_selftest():
    assert main(["selftest"]) == 0


def test_cli_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["encode"])                      # missing positionals
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["transcode", "a", "b"])         # unknown subcommand
    assert exc.value.code == 1
    assert main([]) == 1


def test_cli_runtime_errors_exit_2(tmp_path):
    assert main(["encode", str(tmp_path / "missing.ply"),
                 str(tmp_path / "o.bin")]) == 2
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a stream")
    ply, _ = _write_cloud(tmp_path)
    assert main(["decode", str(bad), str(ply), str(tmp_path / "r.ply")]) == 2
