use kgan_core::gan::{build_student, build_teacher};

/// Parameter count of a k×k conv stack with biases plus the dense head,
/// walked from channel widths alone.
fn oracle(size: usize, scale: f64) -> (usize, usize) {
    let w = |c: usize| ((c as f64 * scale).ceil() as usize).max(1);
    let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;

    let gen_chain = [1, w(32), w(64), w(64), w(32), 1];
    let generator: usize = gen_chain.windows(2).map(|p| conv(p[0], p[1], 3)).sum();

    let disc_chain = [2, w(32), w(64), w(64)];
    let convs: usize = disc_chain.windows(2).map(|p| conv(p[0], p[1], 4)).sum();
    let flat = w(64) * (size / 8) * (size / 8);
    let discriminator = convs + flat * 2 + 2;
    (generator, discriminator)
}

const TEACHER_32: usize = 176_035;
const TEACHER_16: usize = 174_499;
const STUDENT_HALF_32: usize = 45_011;

#[test]
fn counts_match_shape_walk() {
    for (size, scale) in [(16, 1.0), (32, 1.0), (32, 0.5), (64, 0.25)] {
        let model = if scale == 1.0 {
            build_teacher(size, 0).unwrap()
        } else {
            build_student(size, 0, scale).unwrap()
        };
        let (g, d) = oracle(size, scale);
        assert_eq!(model.generator.parameter_count(), g, "G size {size} scale {scale}");
        assert_eq!(model.discriminator.parameter_count(), d, "D size {size} scale {scale}");
        assert_eq!(model.parameter_count(), g + d);
    }
}

#[test]
fn frozen_counts() {
    assert_eq!(build_teacher(32, 0).unwrap().parameter_count(), TEACHER_32);
    assert_eq!(build_teacher(16, 0).unwrap().parameter_count(), TEACHER_16);
    assert_eq!(build_student(32, 0, 0.5).unwrap().parameter_count(), STUDENT_HALF_32);
}

#[test]
fn half_scale_student_is_under_sixty_percent() {
    for size in [16, 32, 64] {
        let t = build_teacher(size, 0).unwrap().parameter_count();
        let s = build_student(size, 0, 0.5).unwrap().parameter_count();
        assert!((s as f64) < 0.6 * t as f64, "size {size}: {s} vs {t}");
    }
}

#[test]
fn count_is_seed_independent() {
    let a = build_student(16, 1, 0.5).unwrap();
    let b = build_student(16, 99, 0.5).unwrap();
    assert_eq!(a.parameter_count(), b.parameter_count());
    assert_eq!(a.parameters().parameter_count(), a.parameter_count());
}
