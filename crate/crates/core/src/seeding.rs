//! Deterministic seed derivation.
//!
//! Every randomized component (shuffling, weight init, dropout, mask
//! sampling) gets its own seed derived from the master seed and a stable
//! component name, so reruns are bit-identical and components stay
//! decoupled: adding a draw in one place never shifts another component's
//! stream.

/// Derives a component seed from the master seed via FNV-1a over the
/// component name, folded into the master seed with splitmix64. The hash
/// is fixed by this code, not by the standard library's `Hasher`, so it
/// can never change between toolchain releases.
pub fn component_seed(master: u64, component: &str) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf29ce484222325;
    const FNV_PRIME: u64 = 0x100000001b3;
    let mut h = FNV_OFFSET;
    for b in component.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(master ^ h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_across_calls() {
        assert_eq!(component_seed(42, "split"), component_seed(42, "split"));
    }

    #[test]
    fn differs_by_component() {
        assert_ne!(component_seed(42, "split"), component_seed(42, "init"));
    }

    #[test]
    fn differs_by_master() {
        assert_ne!(component_seed(1, "split"), component_seed(2, "split"));
    }

    #[test]
    fn frozen_values() {
        // Pinned so a refactor cannot silently re-seed every component.
        assert_eq!(component_seed(42, "split"), 0x9dee_72c6_ab27_0651);
        assert_eq!(component_seed(0, "init"), 0x99fb_af53_0847_5366);
    }
}
