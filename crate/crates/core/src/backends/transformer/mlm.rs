//! Masked-language-model infiller. Only whole-word vocabulary entries are
//! proposed; `##` continuations and special tokens are skipped.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, D};
use candle_nn::VarBuilder;
use candle_transformers::models::distilbert::DistilBertForMaskedLM;
use tokenizers::Tokenizer;

use super::{backend_err, load_config, load_tokenizer, resolve_base, TransformerOptions, MLM, WEIGHTS_FILE};
use crate::error::{Error, Result};
use crate::masking::{require_single_mask, InfillerBackend};

const MASK: &str = "[MASK]";

pub struct MlmInfiller {
    options: TransformerOptions,
    dir: PathBuf,
    tokenizer: Tokenizer,
    model: DistilBertForMaskedLM,
    mask_id: u32,
    device: Device,
}

fn is_whole_word(token: &str) -> bool {
    !token.starts_with("##") && !token.starts_with('[') && token.chars().any(char::is_alphanumeric)
}

impl MlmInfiller {
    pub fn new(options: TransformerOptions) -> Result<Self> {
        let dir = resolve_base(&options.base)?;
        let device = Device::Cpu;
        let config = load_config(&dir)?;
        let tokenizer = load_tokenizer(&dir)?;
        let mask_id = tokenizer
            .token_to_id(MASK)
            .ok_or_else(|| Error::Model(format!("{}: tokenizer has no {MASK} token", dir.display())))?;
        let tensors = candle_core::safetensors::load(dir.join(WEIGHTS_FILE), &device)
            .map_err(|e| Error::Model(format!("{}: {e}", dir.display())))?;
        let vb = VarBuilder::from_tensors(tensors, DType::F32, &device);
        let model = DistilBertForMaskedLM::load(vb, &config)
            .map_err(|e| Error::Model(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            options,
            dir,
            tokenizer,
            model,
            mask_id,
            device,
        })
    }

    pub fn weights_dir(&self) -> &Path {
        &self.dir
    }
}

impl InfillerBackend for MlmInfiller {
    fn backend_name(&self) -> &str {
        MLM
    }

    fn mask_token(&self) -> &str {
        MASK
    }

    fn fill(&self, text: &str, k: usize) -> Result<Vec<(String, f64)>> {
        require_single_mask(text, MASK)?;
        let encoding = self.tokenizer.encode(text, true).map_err(backend_err)?;
        let ids = encoding.get_ids();
        let position = ids
            .iter()
            .position(|&id| id == self.mask_id)
            .ok_or_else(|| Error::InvalidInput(format!("{MASK} was not kept as a single token")))?;
        let input = Tensor::new(ids, &self.device).and_then(|t| t.unsqueeze(0)).map_err(backend_err)?;
        let no_padding = Tensor::zeros((1, 1, 1, ids.len()), DType::U8, &self.device).map_err(backend_err)?;
        let probs = self
            .model
            .forward(&input, &no_padding)
            .and_then(|logits| logits.get(0))
            .and_then(|logits| logits.get(position))
            .and_then(|logits| candle_nn::ops::softmax(&logits, D::Minus1))
            .and_then(|p| p.to_vec1::<f32>())
            .map_err(backend_err)?;
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        Ok(order
            .into_iter()
            .filter(|&i| probs[i] > 0.0)
            .filter_map(|i| {
                let token = self.tokenizer.id_to_token(i as u32)?;
                is_whole_word(&token).then(|| (token, f64::from(probs[i])))
            })
            .take(k)
            .collect())
    }

    /// Pretrained weights stay where they are; the manifest records `base`.
    fn save(&self, _dir: &Path) -> Result<()> {
        log::debug!("{MLM} infiller refers to {} ({})", self.dir.display(), self.options.base);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whole_words_only() {
        assert!(is_whole_word("popular"));
        assert!(!is_whole_word("##ing"));
        assert!(!is_whole_word("[SEP]"));
        assert!(!is_whole_word(","));
    }
}
