use crate::Result;

/// A differentiable per-example loss over a flat parameter vector.
///
/// Implemented by [`TinyModel`](super::TinyModel) over tasks and by the
/// convex diagnostic head over featurized examples; Hessians, influence
/// products and first-order residuals are written against this trait.
pub trait Objective: Sync {
    type Example: Sync;

    /// Parameters the objective is currently evaluated at.
    fn current_params(&self) -> &[f64];

    fn loss_at(&self, params: &[f64], example: &Self::Example) -> Result<f64>;

    fn gradient_at(&self, params: &[f64], example: &Self::Example) -> Result<Vec<f64>>;

    fn dim(&self) -> usize {
        self.current_params().len()
    }

    fn loss(&self, example: &Self::Example) -> Result<f64> {
        self.loss_at(self.current_params(), example)
    }

    fn grad(&self, example: &Self::Example) -> Result<Vec<f64>> {
        self.gradient_at(self.current_params(), example)
    }
}
