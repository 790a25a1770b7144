//! Portable seeded generator for synthetic markets.
//!
//! xorshift64* (Vigna 2014) with shifts 12, 25, 27 and multiplier
//! `0x2545F4914F6CDD1D`. The state is seeded through splitmix64 so nearby
//! seeds give unrelated streams and a zero state cannot occur. Uniforms use
//! the top 53 bits; normals use Box-Muller and cache the second draw.
//! Everything is integer arithmetic until the final conversion, so a
//! reimplementation in any language reproduces the streams bit for bit.

const MULTIPLIER: u64 = 0x2545_F491_4F6C_DD1D;
const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct XorShift64Star {
    state: u64,
    spare: Option<f64>,
}

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent stream `stream` of `seed`, used for per-path generation.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut state = splitmix64(seed ^ stream.wrapping_mul(GOLDEN));
        if state == 0 {
            state = GOLDEN;
        }
        XorShift64Star { state, spare: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(MULTIPLIER)
    }

    /// Uniform on `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 − u lies in (0, 1], keeping the log finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}
