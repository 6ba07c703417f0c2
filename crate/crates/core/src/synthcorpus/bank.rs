use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::lexicon::NUM_SPECIAL;
use super::CorpusConfig;
use crate::error::{Error, Result};
use crate::numerics::{stream_for, RngStream, Tensor};

/// Per-token acoustic templates. Template `k` renders token id
/// `NUM_SPECIAL + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolBank {
    templates: Vec<Tensor>,
    audio_dim: usize,
}

/// Frames of one rendered utterance with its token-to-frame alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFrames {
    pub frames: Tensor,
    /// Half-open frame interval per token.
    pub alignment: Vec<(usize, usize)>,
}

pub fn build_symbol_bank(config: &CorpusConfig, rng: &mut RngStream) -> Result<SymbolBank> {
    if config.vocab_size < 10 || config.audio_dim < 4 {
        return Err(Error::Config(format!(
            "corpus too degenerate: vocab_size {} (need >= 10), audio_dim {} (need >= 4)",
            config.vocab_size, config.audio_dim
        )));
    }
    if config.frames_min == 0 || config.frames_min > config.frames_max {
        return Err(Error::Config(format!(
            "template length range {}..={} is empty",
            config.frames_min, config.frames_max
        )));
    }
    let templates = (0..config.vocab_size)
        .map(|_| {
            let len = rng.random_range(config.frames_min..=config.frames_max);
            let data = (0..len * config.audio_dim).map(|_| StandardNormal.sample(rng)).collect();
            Tensor::new(len, config.audio_dim, data)
        })
        .collect();
    Ok(SymbolBank { templates, audio_dim: config.audio_dim })
}

impl SymbolBank {
    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn audio_dim(&self) -> usize {
        self.audio_dim
    }

    pub fn template(&self, token_id: u32) -> Option<&Tensor> {
        (token_id as usize).checked_sub(NUM_SPECIAL).and_then(|k| self.templates.get(k))
    }
}

/// Speaker offset vector: standard normal direction scaled to `offset_scale`.
pub fn speaker_offset(config: &CorpusConfig, speaker: u32) -> Vec<f64> {
    let mut rng = stream_for(config.seed, "speaker", u64::from(speaker));
    let v: Vec<f64> = (0..config.audio_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = crate::numerics::tensor::norm(&v);
    if n == 0.0 {
        return vec![0.0; config.audio_dim];
    }
    v.iter().map(|x| x * config.offset_scale / n).collect()
}

/// Concatenates token templates, adds the speaker offset and Gaussian noise.
pub fn synthesize_utterance(
    token_ids: &[u32],
    speaker_id: u32,
    bank: &SymbolBank,
    config: &CorpusConfig,
    rng: &mut RngStream,
) -> Result<AudioFrames> {
    let offset = speaker_offset(config, speaker_id);
    let mut data = Vec::new();
    let mut alignment = Vec::with_capacity(token_ids.len());
    let mut t = 0;
    for &id in token_ids {
        let tpl = bank
            .template(id)
            .ok_or_else(|| Error::Data(format!("token not in bank: id {id}")))?;
        for r in 0..tpl.rows() {
            for (x, o) in tpl.row(r).iter().zip(&offset) {
                let noise: f64 = if config.noise_std > 0.0 {
                    let z: f64 = StandardNormal.sample(rng);
                    z * config.noise_std
                } else {
                    0.0
                };
                data.push(x + o + noise);
            }
        }
        alignment.push((t, t + tpl.rows()));
        t += tpl.rows();
    }
    Ok(AudioFrames { frames: Tensor::new(t, bank.audio_dim, data), alignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    fn cfg() -> CorpusConfig {
        CorpusConfig { vocab_size: 40, audio_dim: 16, seed: 7, ..CorpusConfig::default() }
    }

    #[test]
    fn bank_shapes() {
        let bank = build_symbol_bank(&cfg(), &mut seeded_rng(7, 0)).unwrap();
        assert_eq!(bank.len(), 40);
        for k in 0..40 {
            let t = bank.template((k + NUM_SPECIAL) as u32).unwrap();
            assert!((10..=12).contains(&t.rows()));
            assert_eq!(t.cols(), 16);
        }
        assert_eq!(bank, build_symbol_bank(&cfg(), &mut seeded_rng(7, 0)).unwrap());
    }

    #[test]
    fn degenerate_bank_rejected() {
        let c = CorpusConfig { vocab_size: 5, ..cfg() };
        let e = build_symbol_bank(&c, &mut seeded_rng(7, 0)).unwrap_err();
        assert!(e.to_string().contains("corpus too degenerate"));
        let c = CorpusConfig { audio_dim: 3, ..cfg() };
        assert!(build_symbol_bank(&c, &mut seeded_rng(7, 0)).is_err());
    }

    #[test]
    fn alignment_follows_template_lengths() {
        let c = cfg();
        let bank = build_symbol_bank(&c, &mut seeded_rng(7, 0)).unwrap();
        let ids = [4u32, 5, 6];
        let lens: Vec<usize> = ids.iter().map(|&i| bank.template(i).unwrap().rows()).collect();
        let a = synthesize_utterance(&ids, 0, &bank, &c, &mut seeded_rng(1, 1)).unwrap();
        assert_eq!(a.frames.rows(), lens.iter().sum::<usize>());
        assert_eq!(a.alignment[0], (0, lens[0]));
        assert_eq!(a.alignment[1], (lens[0], lens[0] + lens[1]));
        assert_eq!(a.alignment[2].1, a.frames.rows());
        assert!(synthesize_utterance(&[99], 0, &bank, &c, &mut seeded_rng(1, 1)).is_err());
    }

    #[test]
    fn speakers_differ_by_their_offsets() {
        let c = CorpusConfig { noise_std: 0.0, ..cfg() };
        let bank = build_symbol_bank(&c, &mut seeded_rng(7, 0)).unwrap();
        let ids = [4u32, 9, 13, 20];
        let a = synthesize_utterance(&ids, 0, &bank, &c, &mut seeded_rng(1, 1)).unwrap();
        let b = synthesize_utterance(&ids, 1, &bank, &c, &mut seeded_rng(1, 2)).unwrap();
        let (o0, o1) = (speaker_offset(&c, 0), speaker_offset(&c, 1));
        assert!((crate::numerics::tensor::norm(&o0) - 0.5).abs() < 1e-12);
        for r in 0..a.frames.rows() {
            for k in 0..16 {
                let d = a.frames.get(r, k) - b.frames.get(r, k);
                assert!((d - (o0[k] - o1[k])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn silent_speakers_render_identically() {
        let c = CorpusConfig { noise_std: 0.0, offset_scale: 0.0, ..cfg() };
        let bank = build_symbol_bank(&c, &mut seeded_rng(7, 0)).unwrap();
        let ids = [4u32, 9, 13];
        let a = synthesize_utterance(&ids, 0, &bank, &c, &mut seeded_rng(1, 1)).unwrap();
        let b = synthesize_utterance(&ids, 2, &bank, &c, &mut seeded_rng(5, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn same_stream_same_frames() {
        let c = cfg();
        let bank = build_symbol_bank(&c, &mut seeded_rng(7, 0)).unwrap();
        let ids = [4u32, 9];
        let a = synthesize_utterance(&ids, 1, &bank, &c, &mut seeded_rng(3, 3)).unwrap();
        let b = synthesize_utterance(&ids, 1, &bank, &c, &mut seeded_rng(3, 3)).unwrap();
        assert_eq!(a, b);
    }
}
