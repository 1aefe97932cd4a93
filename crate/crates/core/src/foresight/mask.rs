use crate::diffcore::AttentionMask;
use crate::error::{Error, Result};

/// Frame-level causal mask `C ⊗ 1_{L×L}`: token `(i, a)` may attend to
/// `(j, b)` iff `j <= i`. Attention inside a frame is dense.
pub fn build_block_causal_mask(frames: usize, tokens_per_frame: usize) -> Result<AttentionMask> {
    if frames == 0 || tokens_per_frame == 0 {
        return Err(Error::InvalidArgument("frames and tokens per frame must be >= 1".into()));
    }
    let n = frames * tokens_per_frame;
    AttentionMask::from_fn(n, n, |r, c| c / tokens_per_frame <= r / tokens_per_frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_frame_is_dense() {
        let m = build_block_causal_mask(1, 4).unwrap();
        assert_eq!(m, AttentionMask::dense(4, 4));
    }

    #[test]
    fn two_frames_one_token() {
        let m = build_block_causal_mask(2, 1).unwrap();
        assert_eq!(m.entry(0, 0), 0.0);
        assert_eq!(m.entry(0, 1), f64::NEG_INFINITY);
        assert_eq!(m.entry(1, 0), 0.0);
        assert_eq!(m.entry(1, 1), 0.0);
    }

    #[test]
    fn three_frames_two_tokens_by_hand() {
        // C = [[0,-,-],[0,0,-],[0,0,0]] expanded by 2x2 blocks
        let expect = [
            [1, 1, 0, 0, 0, 0],
            [1, 1, 0, 0, 0, 0],
            [1, 1, 1, 1, 0, 0],
            [1, 1, 1, 1, 0, 0],
            [1, 1, 1, 1, 1, 1],
            [1, 1, 1, 1, 1, 1],
        ];
        let m = build_block_causal_mask(3, 2).unwrap();
        for (i, row) in expect.iter().enumerate() {
            for (j, &a) in row.iter().enumerate() {
                assert_eq!(m.is_allowed(i, j), a == 1, "({i},{j})");
            }
        }
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(build_block_causal_mask(0, 3).is_err());
    }
}
