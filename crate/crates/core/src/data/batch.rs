use rand::seq::SliceRandom;

use super::corpus::Utterance;
use crate::nn::{Real, Tensor};
use crate::rng::substream;

/// A padded minibatch. Frames and tokens are padded to the batch maxima;
/// masks mark valid positions.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    /// Positions of the members in the source corpus.
    pub indices: Vec<usize>,
    /// `B × T_max × D_feat`
    pub features: Tensor<F>,
    /// `B × M_max × D_embed`
    pub embeddings: Tensor<F>,
    pub frame_lens: Vec<usize>,
    pub token_lens: Vec<usize>,
    pub frame_mask: Vec<Vec<bool>>,
    pub token_mask: Vec<Vec<bool>>,
    pub labels: Vec<usize>,
}

impl<F: Real> Batch<F> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn max_frames(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn max_tokens(&self) -> usize {
        self.embeddings.shape()[1]
    }

    fn slab(t: &Tensor<F>, b: usize) -> Tensor<F> {
        let (rows, cols) = (t.shape()[1], t.shape()[2]);
        let n = rows * cols;
        Tensor::from_vec(&[rows, cols], t.data()[b * n..(b + 1) * n].to_vec()).expect("slab shape")
    }

    /// Padded `T_max × D_feat` features of member `b`.
    pub fn member_features(&self, b: usize) -> Tensor<F> {
        Self::slab(&self.features, b)
    }

    /// Padded `M_max × D_embed` embeddings of member `b`.
    pub fn member_embeddings(&self, b: usize) -> Tensor<F> {
        Self::slab(&self.embeddings, b)
    }
}

fn pad_into<F: Real>(dst: &mut Tensor<F>, b: usize, src: &Tensor<F>) {
    let (rows, cols) = (dst.shape()[1], dst.shape()[2]);
    let start = b * rows * cols;
    dst.data_mut()[start..start + src.len()].copy_from_slice(src.data());
}

/// Shuffles `corpus` with a stream derived from `(seed, epoch)` and cuts it
/// into padded batches of at most `batch_size`.
pub fn make_batches<F: Real>(corpus: &[Utterance<F>], batch_size: usize, seed: u64, epoch: usize) -> Vec<Batch<F>> {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut substream(seed, &format!("shuffle/{epoch}")));
    order
        .chunks(batch_size.max(1))
        .map(|chunk| {
            let members: Vec<&Utterance<F>> = chunk.iter().map(|&i| &corpus[i]).collect();
            let t_max = members.iter().map(|u| u.frames()).max().unwrap_or(0);
            let m_max = members.iter().map(|u| u.words()).max().unwrap_or(0);
            let d_feat = members.first().map_or(0, |u| u.features.cols());
            let d_emb = members.first().map_or(0, |u| u.embeddings.cols());
            let mut features = Tensor::zeros(&[chunk.len(), t_max, d_feat]);
            let mut embeddings = Tensor::zeros(&[chunk.len(), m_max, d_emb]);
            for (b, u) in members.iter().enumerate() {
                pad_into(&mut features, b, &u.features);
                pad_into(&mut embeddings, b, &u.embeddings);
            }
            let frame_lens: Vec<usize> = members.iter().map(|u| u.frames()).collect();
            let token_lens: Vec<usize> = members.iter().map(|u| u.words()).collect();
            Batch {
                indices: chunk.to_vec(),
                features,
                embeddings,
                frame_mask: frame_lens.iter().map(|&n| (0..t_max).map(|i| i < n).collect()).collect(),
                token_mask: token_lens.iter().map(|&n| (0..m_max).map(|i| i < n).collect()).collect(),
                frame_lens,
                token_lens,
                labels: members.iter().map(|u| u.label).collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(frames: usize, words: usize, label: usize) -> Utterance<f64> {
        Utterance {
            id: format!("u{frames}-{words}"),
            features: Tensor::from_vec(&[frames, 2], vec![1.0; frames * 2]).unwrap(),
            tokens: vec!["w".into(); words],
            token_ids: vec![None; words],
            embeddings: Tensor::from_vec(&[words, 3], vec![1.0; words * 3]).unwrap(),
            spans: None,
            label,
            session: None,
        }
    }

    #[test]
    fn oversized_batch_is_one_batch() {
        let corpus = vec![utt(3, 1, 0), utt(5, 2, 1), utt(4, 4, 2)];
        let batches = make_batches(&corpus, 10, 1, 0);
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].max_frames(), 5);
        assert_eq!(batches[0].max_tokens(), 4);
    }

    #[test]
    fn masks_mark_padding() {
        let corpus = vec![utt(3, 1, 0), utt(5, 2, 1), utt(4, 4, 2)];
        for b in make_batches(&corpus, 3, 1, 0) {
            for k in 0..b.len() {
                let invalid = b.frame_mask[k].iter().filter(|&&m| !m).count();
                assert_eq!(invalid, b.max_frames() - b.frame_lens[k]);
                let invalid = b.token_mask[k].iter().filter(|&&m| !m).count();
                assert_eq!(invalid, b.max_tokens() - b.token_lens[k]);
                let f = b.member_features(k);
                assert!(f.data()[b.frame_lens[k] * 2..].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn order_is_seeded() {
        let corpus: Vec<_> = (0..20).map(|i| utt(2 + i % 3, 1, i % 4)).collect();
        let a: Vec<Vec<usize>> = make_batches(&corpus, 4, 7, 3).into_iter().map(|b| b.indices).collect();
        let b: Vec<Vec<usize>> = make_batches(&corpus, 4, 7, 3).into_iter().map(|b| b.indices).collect();
        let c: Vec<Vec<usize>> = make_batches(&corpus, 4, 7, 4).into_iter().map(|b| b.indices).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut all: Vec<usize> = a.concat();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }
}
