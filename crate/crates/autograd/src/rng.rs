//! Counter-based uniform stream for dropout masks.

/// Identifies one dropout mask: the same key always yields the same mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DropoutKey {
    pub seed: u64,
    pub layer: u64,
    pub step: u64,
}

impl DropoutKey {
    pub fn new(seed: u64, layer: u64, step: u64) -> Self {
        Self { seed, layer, step }
    }

    fn stream(&self) -> u64 {
        let h = mix(self.seed ^ 0x6a09_e667_f3bc_c908);
        let h = mix(h ^ self.layer.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        mix(h ^ self.step.wrapping_mul(0xbf58_476d_1ce4_e5b9))
    }

    /// Uniform draw in `[0, 1)` for element `counter`.
    pub fn uniform(&self, counter: u64) -> f64 {
        uniform_at(self.stream(), counter)
    }

    pub(crate) fn uniforms(&self, n: usize) -> impl Iterator<Item = f64> {
        let s = self.stream();
        (0..n as u64).map(move |c| uniform_at(s, c))
    }
}

fn uniform_at(stream: u64, counter: u64) -> f64 {
    let z = mix(stream ^ mix(counter.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_stream() {
        let k = DropoutKey::new(7, 3, 11);
        let a: Vec<f64> = k.uniforms(64).collect();
        let b: Vec<f64> = k.uniforms(64).collect();
        assert_eq!(a, b);
        let c: Vec<f64> = DropoutKey::new(7, 3, 12).uniforms(64).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn draws_look_uniform() {
        let k = DropoutKey::new(1, 2, 3);
        let n = 20_000;
        let mean: f64 = k.uniforms(n).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        assert!(k.uniforms(n).all(|u| (0.0..1.0).contains(&u)));
    }
}
