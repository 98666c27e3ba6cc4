//! Split conformal interval for one test point with a least-squares residual score.

use dfinfer::conformal::{split_set, Level, YDomain};
use dfinfer::scores::{Dataset, PredictorKind, ScoreFunction, ScoreKind, ScoreRecipe};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let train = Dataset::new(vec![vec![1.0, 0.2], vec![1.0, 0.5], vec![1.0, 0.9]], vec![0.4, 1.1, 1.8])?;
    let cal = Dataset::new(vec![vec![1.0, 0.3]; 9], vec![0.5, 0.7, 0.6, 0.8, 0.5, 0.65, 0.55, 0.75, 0.7])?;
    let score = ScoreRecipe::new(ScoreKind::Residual, PredictorKind::LeastSquares).fit(&train)?;
    let set = split_set(&ScoreFunction::pretrained(score), &cal, &[1.0, 0.4], Level::new(0.1)?, &YDomain::Real)?;
    println!("{}", serde_json::to_string(&set)?);
    Ok(())
}
