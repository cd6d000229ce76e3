//! Counter-based deterministic random numbers: each draw is a pure
//! function of (seed, path index, step index), so path `l` is reproducible
//! independently of the total path count and of threading.

const K_PATH: u64 = 0x9E37_79B9_7F4A_7C15;
const K_STEP: u64 = 0xC2B2_AE3D_27D4_EB4F;
const K_CTR: u64 = 0x1656_67B1_9E37_79F9;

#[inline]
fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a (seed, path, step, counter) tuple into one 64-bit word.
#[inline]
pub fn mix(seed: u64, path: u64, step: u64, ctr: u64) -> u64 {
    let mut h = finalize(seed ^ 0x6A09_E667_F3BC_C909);
    h = finalize(h ^ path.wrapping_mul(K_PATH));
    h = finalize(h ^ step.wrapping_mul(K_STEP));
    h = finalize(h ^ ctr.wrapping_mul(K_CTR));
    h
}

/// Uniform in the open interval (0, 1).
#[inline]
pub fn uniform(seed: u64, path: u64, step: u64, ctr: u64) -> f64 {
    // 53 significand bits, offset by half an ulp to exclude 0 and 1.
    ((mix(seed, path, step, ctr) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw for (seed, path, step) via Box-Muller.
#[inline]
pub fn gaussian(seed: u64, path: u64, step: u64) -> f64 {
    let u1 = uniform(seed, path, step, 0);
    let u2 = uniform(seed, path, step, 1);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
