use std::path::Path;

use avsm_core::dsp::AudioBuffer;

use crate::checkpoint::load_checkpoint;
use crate::error::{Error, Result};
use crate::vemb::read_vemb;
use crate::wav::{read_wav, write_wav};

/// Enhances one WAV file with a trained checkpoint.
pub fn enhance_file(checkpoint: &Path, input: &Path, vemb: Option<&Path>, output: &Path) -> Result<AudioBuffer> {
    let model = load_checkpoint(checkpoint)?.into_model()?;
    let visual = match (model.config().use_visual, vemb) {
        (true, None) => {
            return Err(Error::Usage(
                "this checkpoint was trained with use_visual = true; pass --vemb with the speaker's embeddings".into(),
            ))
        }
        (true, Some(p)) => Some(read_vemb(p)?),
        (false, _) => None,
    };
    let noisy = read_wav(input)?;
    let out = model.forward(&noisy, visual.as_ref())?.enhanced;
    write_wav(output, &out)?;
    Ok(out)
}
