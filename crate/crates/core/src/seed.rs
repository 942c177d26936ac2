//! Deterministic seed derivation for independent work items.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a path of identifiers
/// (e.g. cell and replicate numbers).
pub fn mix_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &id| {
        splitmix64(acc ^ splitmix64(id.wrapping_add(0x632b_e59b_d9b4_e019)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_paths_give_distinct_seeds() {
        let a = mix_seed(7, &[1, 2]);
        assert_eq!(a, mix_seed(7, &[1, 2]));
        assert_ne!(a, mix_seed(7, &[2, 1]));
        assert_ne!(a, mix_seed(8, &[1, 2]));
    }
}
