use crate::{Error, Result};

fn check_probs(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Empty("token probabilities"));
    }
    if let Some(v) = p.iter().find(|&&v| !(v > 0.0 && v <= 1.0)) {
        return Err(Error::InvalidArgument(alloc::format!(
            "token probability {v} outside (0, 1]"
        )));
    }
    Ok(())
}

fn check_entropies(h: &[f64]) -> Result<()> {
    if h.is_empty() {
        return Err(Error::Empty("token entropies"));
    }
    Ok(())
}

/// `max_i(-ln p_i)`
pub fn token_max_prob(p: &[f64]) -> Result<f64> {
    check_probs(p)?;
    Ok(p.iter().map(|&v| -libm::log(v)).fold(f64::NEG_INFINITY, f64::max))
}

/// `-(1/m) sum_i ln p_i`
pub fn token_avg_prob(p: &[f64]) -> Result<f64> {
    check_probs(p)?;
    Ok(-p.iter().map(|&v| libm::log(v)).sum::<f64>() / p.len() as f64)
}

/// `max_i H_i`
pub fn token_max_entropy(h: &[f64]) -> Result<f64> {
    check_entropies(h)?;
    Ok(h.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// `(1/m) sum_i H_i`
pub fn token_avg_entropy(h: &[f64]) -> Result<f64> {
    check_entropies(h)?;
    Ok(h.iter().sum::<f64>() / h.len() as f64)
}
