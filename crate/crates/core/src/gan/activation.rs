use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    SigmoidOutput,
    TanhOutput,
}

/// How the ReLU derivative is formed during backprop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    /// 1 where the pre-activation is positive, else 0.
    #[default]
    Indicator,
    /// The layer output itself stands in for the derivative.
    OutputValue,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationFn {
    pub kind: ActivationKind,
    pub derivative_mode: DerivativeMode,
}

impl ActivationFn {
    pub fn new(kind: ActivationKind, derivative_mode: DerivativeMode) -> Self {
        ActivationFn { kind, derivative_mode }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::SigmoidOutput => sigmoid(x),
            ActivationKind::TanhOutput => x.tanh(),
        }
    }

    /// d out / d pre, given both.
    pub fn derivative(&self, pre: f64, out: f64) -> f64 {
        match self.kind {
            ActivationKind::Relu => match self.derivative_mode {
                DerivativeMode::Indicator => {
                    if pre > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                DerivativeMode::OutputValue => out,
            },
            ActivationKind::SigmoidOutput => out * (1.0 - out),
            ActivationKind::TanhOutput => 1.0 - out * out,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
