use super::EvalError;

/// Coefficient of determination, `1 - SS_res / SS_tot`.
pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> Result<f64, EvalError> {
    if y_true.len() != y_pred.len() || y_true.len() < 2 {
        return Err(EvalError::BadLengths(y_true.len(), y_pred.len()));
    }
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Err(EvalError::DegenerateTruth);
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_mean_and_worse() {
        let y = [1.0, 3.0, 4.0, 7.0];
        assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
        assert_eq!(r_squared(&y, &[3.75; 4]).unwrap(), 0.0);
        assert!(r_squared(&y, &[7.0, 4.0, 3.0, 1.0]).unwrap() < 0.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(r_squared(&[2.0, 2.0], &[1.0, 3.0]), Err(EvalError::DegenerateTruth)));
        assert!(matches!(r_squared(&[2.0], &[2.0]), Err(EvalError::BadLengths(1, 1))));
        assert!(matches!(r_squared(&[1.0, 2.0], &[2.0]), Err(EvalError::BadLengths(2, 1))));
    }
}
