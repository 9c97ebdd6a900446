/// Position in training used by the KL warm-up.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnealState {
    /// 1-based epoch.
    pub epoch: usize,
    /// 0-based batch index within the epoch.
    pub batch: usize,
    pub batch_size: usize,
    pub anneal_ratio: f64,
}

/// `min(1, (j + (i − 1)·M + 1) / (α·M))`.
pub fn beta(state: &AnnealState) -> f64 {
    let i = state.epoch.max(1) as f64;
    let j = state.batch as f64;
    let m = state.batch_size.max(1) as f64;
    let raw = (j + (i - 1.0) * m + 1.0) / (state.anneal_ratio * m);
    raw.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(epoch: usize, batch: usize) -> AnnealState {
        AnnealState {
            epoch,
            batch,
            batch_size: 100,
            anneal_ratio: 100.0,
        }
    }

    #[test]
    fn schedule_reference_points() {
        assert_eq!(beta(&at(1, 0)), 1e-4);
        assert_eq!(beta(&at(100, 99)), 1.0);
        assert_eq!(beta(&at(200, 50)), 1.0);
    }

    #[test]
    fn schedule_is_non_decreasing() {
        let mut last = 0.0;
        for i in 1..=120 {
            for j in 0..100 {
                let b = beta(&at(i, j));
                assert!(b >= last);
                assert!(b > 0.0 && b <= 1.0);
                last = b;
            }
        }
        assert_eq!(last, 1.0);
    }
}
