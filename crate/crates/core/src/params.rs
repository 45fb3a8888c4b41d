use crate::tensor::Tensor;

/// Anything that owns trainable tensors.
///
/// Names are dotted paths (`stages.2.blocks.0.masa.wq`); the visiting order is
/// fixed, so two models built from the same configuration list their tensors
/// in the same order.
pub trait HasParams {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, t| n += t.numel());
        n
    }

    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit_params("", &mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    /// Replaces every parameter with a tracked copy and clears old gradients.
    fn track_params(&mut self) {
        self.visit_params_mut("", &mut |_, t| *t = t.tracked());
    }

    /// Replaces every parameter with an untracked copy.
    fn freeze_params(&mut self) {
        self.visit_params_mut("", &mut |_, t| *t = t.detach());
    }
}
