use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::HeadInput;
use crate::solver::Scheme;

/// How window coefficient estimates turn into the model each window is
/// solved with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientPooling {
    /// Every window is solved with its own coefficients.
    #[default]
    Window,
    /// Coefficients and shifts are averaged over the batch and the mean model
    /// drives every window of it.
    Batch,
}

/// Training hyperparameters. Deserialises from `key = value` text (TOML);
/// every field has a default, so a config file only lists overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Windows per batch (`S_B`).
    pub batch_size: usize,
    /// Samples per window (`k`).
    pub window: usize,
    /// Offset between consecutive window starts; defaults to `window`.
    pub stride: Option<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Rate reached at the last epoch by geometric decay; constant when
    /// absent.
    pub final_learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Polynomial order of the candidate library (`M`).
    pub order: u32,
    /// Number of active coefficients kept by the sparsifier (`p`).
    pub support_size: usize,
    /// GRU width (`H`).
    pub hidden: usize,
    /// Hidden widths of the dense head.
    pub dense_hidden: Vec<usize>,
    pub seed: u64,
    /// Start the output layer at zero so every window begins from the empty
    /// model.
    pub zero_output_layer: bool,
    /// Sampling step; taken from the data when absent and checked against it
    /// when present.
    pub dt: Option<f64>,
    /// RK steps per window; defaults to `window - 1`.
    pub solve_steps: Option<usize>,
    /// Epochs trained with the full coefficient matrix before pruning starts.
    pub warmup_epochs: usize,
    /// Epochs over which the kept-coefficient budget shrinks linearly from
    /// the full matrix down to `support_size`. Zero jumps straight to it.
    pub anneal_epochs: usize,
    /// Standardise the network input per channel.
    pub standardize: bool,
    pub head_input: HeadInput,
    pub coefficient_pooling: CoefficientPooling,
    pub scheme: Scheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            window: 20,
            stride: None,
            epochs: 100,
            learning_rate: 1e-3,
            final_learning_rate: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            order: 2,
            support_size: 4,
            hidden: 16,
            dense_hidden: vec![32],
            seed: 0,
            zero_output_layer: false,
            dt: None,
            solve_steps: None,
            warmup_epochs: 0,
            anneal_epochs: 0,
            standardize: false,
            head_input: HeadInput::Last,
            coefficient_pooling: CoefficientPooling::Window,
            scheme: Scheme::Rk4,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml_parse(text)
    }

    pub fn to_toml_string(&self) -> String {
        toml_render(self)
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.window)
    }

    pub fn solve_steps(&self) -> usize {
        self.solve_steps.unwrap_or(self.window.saturating_sub(1))
    }

    /// Number of coefficients kept during `epoch` (zero-based) out of
    /// `total`.
    pub fn budget(&self, epoch: usize, total: usize) -> usize {
        let p = self.support_size.min(total);
        if epoch < self.warmup_epochs {
            return total;
        }
        let into = epoch - self.warmup_epochs + 1;
        if into >= self.anneal_epochs {
            return p;
        }
        total - (total - p) * into / self.anneal_epochs
    }

    /// Learning rate used throughout `epoch` (zero-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.final_learning_rate {
            Some(last) if self.epochs > 1 && self.learning_rate > 0.0 => {
                self.learning_rate * (last / self.learning_rate).powf(epoch as f64 / (self.epochs - 1) as f64)
            }
            _ => self.learning_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::contract(msg.to_owned()));
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1");
        }
        if self.window < 2 {
            return fail("window must be at least 2");
        }
        if self.stride() < 1 {
            return fail("stride must be at least 1");
        }
        if self.epochs < 1 {
            return fail("epochs must be at least 1");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return fail("learning_rate must be finite and non-negative");
        }
        if let Some(last) = self.final_learning_rate {
            if !(last > 0.0) || !last.is_finite() {
                return fail("final_learning_rate must be finite and positive");
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return fail("optimizer needs 0 <= beta < 1 and epsilon > 0");
        }
        if self.hidden < 1 || self.dense_hidden.iter().any(|&w| w == 0) {
            return fail("layer widths must be positive");
        }
        let steps = self.solve_steps();
        if steps < 1 || steps > self.window - 1 {
            return fail("solve_steps must lie in 1..=window-1");
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return fail("dt must be positive");
            }
        }
        if self.support_size < 1 {
            return fail("support_size must be at least 1");
        }
        Ok(())
    }
}

fn toml_parse(text: &str) -> Result<TrainConfig> {
    toml::from_str(text).map_err(|e| {
        let line = e.span().map(|span| text[..span.start].matches('\n').count() + 1).unwrap_or(0);
        let field = e.span().and_then(|span| {
            let line_text = text[..span.start].rsplit('\n').next().unwrap_or("");
            let key = line_text.split('=').next().unwrap_or("").trim();
            (!key.is_empty() && line_text.contains('=')).then(|| key.to_owned())
        });
        Error::Parse { line, field, msg: e.message().to_owned() }
    })
}

fn toml_render(cfg: &TrainConfig) -> String {
    toml::to_string(cfg).expect("config serialises to TOML")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_adam_conventions() {
        let c = TrainConfig::default();
        assert_eq!((c.learning_rate, c.beta1, c.beta2, c.epsilon), (1e-3, 0.9, 0.999, 1e-8));
        assert_eq!(c.stride(), c.window);
        assert_eq!(c.solve_steps(), c.window - 1);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let text = "# desk scale\nwindow = 20\nhidden = 16 # GRU width\nlearning_rate = 0.01\ndense_hidden = [32, 16]\nhead_input = \"mean\"\nscheme = \"rk2\"\ndt = 0.01\n";
        let c = TrainConfig::from_toml_str(text).unwrap();
        assert_eq!(c.window, 20);
        assert_eq!(c.dense_hidden, vec![32, 16]);
        assert_eq!(c.head_input, HeadInput::Mean);
        assert_eq!(c.scheme, Scheme::Rk2);
        assert_eq!(c.dt, Some(0.01));
        let again = TrainConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        assert!(TrainConfig::from_toml_str("windw = 3\n").is_err());
        match TrainConfig::from_toml_str("window = 3\nepochs = ?\n") {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(field.as_deref(), Some("epochs"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn learning_rate_decays_geometrically() {
        let c = TrainConfig { epochs: 3, learning_rate: 1e-2, final_learning_rate: Some(1e-4), ..Default::default() };
        approx::assert_relative_eq!(c.learning_rate_at(0), 1e-2);
        approx::assert_relative_eq!(c.learning_rate_at(1), 1e-3);
        approx::assert_relative_eq!(c.learning_rate_at(2), 1e-4);
        assert_eq!(TrainConfig::default().learning_rate_at(50), 1e-3);
        assert!(TrainConfig { final_learning_rate: Some(0.0), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn budget_schedule() {
        let c = TrainConfig { warmup_epochs: 2, anneal_epochs: 4, support_size: 4, ..Default::default() };
        let got: Vec<usize> = (0..8).map(|e| c.budget(e, 20)).collect();
        assert_eq!(got, vec![20, 20, 16, 12, 8, 4, 4, 4]);
        let jump = TrainConfig { support_size: 4, ..Default::default() };
        assert_eq!(jump.budget(0, 20), 4);
    }

    #[test]
    fn validation() {
        let bad = [
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { window: 1, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { learning_rate: -1.0, ..Default::default() },
            TrainConfig { solve_steps: Some(20), window: 20, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
