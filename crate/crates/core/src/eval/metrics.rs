use super::EvalError;

/// Levenshtein distance over characters with unit costs.
pub fn edit_distance(a: &str, b: &str) -> usize {
    strsim::levenshtein(a, b)
}

/// Character error rate (total edits over total reference length) and word
/// error rate (fraction of samples not matching exactly).
pub fn cer_wer(predictions: &[String], references: &[String]) -> Result<(f64, f64), EvalError> {
    if predictions.len() != references.len() {
        return Err(EvalError::LengthMismatch { predictions: predictions.len(), references: references.len() });
    }
    if references.is_empty() {
        return Err(EvalError::Empty);
    }
    if references.iter().any(String::is_empty) {
        return Err(EvalError::EmptyReference);
    }
    let edits: usize = predictions.iter().zip(references).map(|(p, r)| edit_distance(p, r)).sum();
    let chars: usize = references.iter().map(|r| r.chars().count()).sum();
    let wrong = predictions.iter().zip(references).filter(|(p, r)| p != r).count();
    Ok((edits as f64 / chars as f64, wrong as f64 / references.len() as f64))
}
