
use super::{init_new_writer_code, writer_batch, CodeKind, CodeTrainConfig, Codebook, WriterCodeError, INIT_SIGMA};
use crate::autodiff::Tensor;
use crate::data::{Dataset, GrayImage, ImagePipeline, Split};
use crate::eval::{cer_wer, EvalReport, WriterRow};
use crate::meta::{episode_rng, sample_episode, EpisodeMode, ProtocolConfig};
use crate::models::{stack_images, ForwardCtx, Model};

/// Test-writer evaluation with codes derived from each episode's support
/// set; without a codebook the frozen model is evaluated on the same episodes.
pub fn evaluate_codes(
    model: &Model,
    book: Option<&Codebook>,
    dataset: &Dataset,
    split: Split,
    pipeline: &ImagePipeline,
    train_cfg: &CodeTrainConfig,
    pc: &ProtocolConfig,
) -> Result<EvalReport, WriterCodeError> {
    let mut rows = Vec::new();
    for (wi, writer) in dataset.writers(split).iter().enumerate() {
        let (mut cer_sum, mut wer_sum, mut n_query) = (0.0, 0.0, 0);
        for run in 0..pc.runs {
            let mut rng = episode_rng(pc.seed, wi, run);
            let ep = sample_episode(dataset, writer, pc.shots, EpisodeMode::Test, &mut rng)
                .map_err(|e| WriterCodeError::InvalidInput(e.to_string()))?;
            n_query = ep.query.len();
            let deltas = match book {
                None => None,
                Some(b) => {
                    let code = if b.kind == CodeKind::Learned {
                        let support = writer_batch(&model.config, dataset, &ep.support, pipeline, None)?;
                        init_new_writer_code(model, &b.adapter, &support, train_cfg.new_code_steps, train_cfg.code_lr, INIT_SIGMA, &mut rng)?
                    } else {
                        let raw: Vec<&GrayImage> = ep.support.iter().map(|&i| &dataset.samples[i].image).collect();
                        b.assign(writer, &raw)?
                    };
                    Some(b.adapter.deltas(&Tensor::new([code.dim()], code.values))?)
                }
            };
            let mut preds = Vec::with_capacity(ep.query.len());
            for chunk in ep.query.chunks(pc.decode_batch.max(1)) {
                let images: Vec<_> = chunk.iter().map(|&i| pipeline.eval_image(&dataset.samples[i].image)).collect();
                let refs: Vec<_> = images.iter().collect();
                let mut ctx = ForwardCtx::eval().with_deltas(deltas.as_deref());
                preds.extend(model.decode(&model.params, &stack_images(&refs)?, &mut ctx)?);
            }
            let refs: Vec<String> = ep.query.iter().map(|&i| dataset.samples[i].text.clone()).collect();
            let (cer, wer) = cer_wer(&preds, &refs).map_err(|e| WriterCodeError::InvalidInput(e.to_string()))?;
            cer_sum += cer;
            wer_sum += wer;
        }
        let runs = pc.runs.max(1) as f64;
        rows.push(WriterRow { writer: writer.clone(), n_query, wer: wer_sum / runs, cer: cer_sum / runs });
    }
    let label = match book {
        None => "baseline".to_string(),
        Some(b) => format!("{} code", b.kind.label()),
    };
    Ok(EvalReport::new(label, rows))
}
