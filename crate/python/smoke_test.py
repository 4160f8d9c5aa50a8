"""Smoke test for the kgan Python extension.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml`
or `pip install crates/py`, then run `python python/smoke_test.py`.
"""

import json
import math
import tempfile

import kgan


def check(cond, msg):
    if not cond:
        raise AssertionError(msg)


def main():
    ln2 = math.log(2.0)
    check(abs(kgan.generator_loss([0.5] * 4) - ln2) < 1e-9, "generator loss at 0.5")
    check(abs(kgan.discriminator_loss([0.5] * 4, [0.5] * 4) - 2 * ln2) < 1e-9, "discriminator loss at 0.5")
    q = kgan.softmax_t([[1.0, 2.0, 3.0]], 4.0)
    check(abs(sum(q[0]) - 1.0) < 1e-12, "softmax rows sum to one")
    check(abs(kgan.soft_label_loss([[0.0, 0.0]], [[0.0, 0.0]], 4.0) - ln2) < 1e-12, "uniform soft loss is ln 2")

    pair = kgan.phantom_pair(7, 16)
    a, b = pair.modality_a, pair.modality_b
    check(len(a) == 16 and len(a[0]) == 16, "phantom size")
    check(abs(kgan.ssim(a, a) - 1.0) < 1e-12, "ssim self-similarity")
    check(kgan.spatial_frequency([[0.3] * 8] * 8) == 0.0, "constant image has zero SF")
    half_a = [[0.5 * x for x in r] for r in a]
    half_b = [[0.5 * x for x in r] for r in b]
    fused = [[x + y for x, y in zip(ra, rb)] for ra, rb in zip(half_a, half_b)]
    check(abs(kgan.scd(fused, half_a, half_b) - 2.0) < 1e-9, "SCD of a sum is 2")

    train, test = kgan.make_split(12, 8, master_seed=3)
    check((len(train), len(test)) == (8, 4), "2/3 split")

    teacher = kgan.GanModel.teacher(8, seed=1)
    student = kgan.GanModel.student(8, seed=2)
    check(student.parameter_count < 0.6 * teacher.parameter_count, "student is smaller")
    out = teacher.synthesize(test[0].modality_a)
    check(all(0.0 < v < 1.0 for row in out for v in row), "sigmoid output range")

    cfg = json.dumps({"epochs": 2, "batch_size": 4, "seed": 5})
    teacher, history = kgan.train_gan(teacher, train, cfg)
    check(len(history) == 2 and history.to_csv().startswith("epoch,L_G,L_D"), "teacher history")
    student, _ = kgan.train_student(teacher, student, train, cfg)
    report = kgan.evaluate(student, test)
    sf, ss, sc = report.mean()
    check(all(math.isfinite(v) for v in (sf, ss, sc)), "finite metrics")
    check(report.to_csv().startswith("id,sf,ssim,scd\n"), "metrics CSV header")

    with tempfile.TemporaryDirectory() as d:
        student.save(d)
        again = kgan.GanModel.load(d)
        check(again.synthesize(test[0].modality_a) == student.synthesize(test[0].modality_a), "checkpoint round trip")
        try:
            kgan.GanModel.load(d + "/missing")
        except FileNotFoundError:
            pass
        else:
            raise AssertionError("missing checkpoint should raise FileNotFoundError")

    code, _, err = kgan.run_cli(["train-teacher", "--config", "/nonexistent/cfg.json"])
    check(code == 1 and "config" in err, "CLI config error exit code")

    print(f"kgan {kgan.__version__} smoke test passed: SF={sf:.3f} SSIM={ss:.4f} SCD={sc:.4f}")


if __name__ == "__main__":
    main()
