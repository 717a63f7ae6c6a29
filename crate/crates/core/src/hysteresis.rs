//! Two-threshold relay.
//!
//! The relay never looks at the signal directly. It is driven by crossing
//! events located by [`crate::dynamics`].

use serde::Serialize;

use crate::error::{Error, Result};

/// Relay output, `+1` (heating) or `-1` (cooling).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum RelayOutput {
    Plus,
    Minus,
}

impl RelayOutput {
    pub fn value(self) -> f64 {
        match self {
            RelayOutput::Plus => 1.0,
            RelayOutput::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            RelayOutput::Plus => RelayOutput::Minus,
            RelayOutput::Minus => RelayOutput::Plus,
        }
    }

    /// The threshold whose attainment flips this output.
    pub fn target(self) -> Threshold {
        match self {
            RelayOutput::Plus => Threshold::Beta,
            RelayOutput::Minus => Threshold::Alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Threshold {
    Alpha,
    Beta,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelayState {
    alpha: f64,
    beta: f64,
    output: RelayOutput,
    last_switch_time: Option<f64>,
    last_event_time: Option<f64>,
    switch_times: Vec<f64>,
}

impl RelayState {
    /// `h(0) = +1` if `g0 < β`, else `-1`.
    pub fn init(g0: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha < beta) {
            return Err(Error::Config(format!(
                "thresholds must satisfy alpha < beta, got alpha = {alpha}, beta = {beta}"
            )));
        }
        let output = if g0 < beta {
            RelayOutput::Plus
        } else {
            RelayOutput::Minus
        };
        Ok(Self::with_output(alpha, beta, output))
    }

    pub(crate) fn with_output(alpha: f64, beta: f64, output: RelayOutput) -> Self {
        Self {
            alpha,
            beta,
            output,
            last_switch_time: None,
            last_event_time: None,
            switch_times: Vec::new(),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn output(&self) -> RelayOutput {
        self.output
    }

    pub fn last_switch_time(&self) -> Option<f64> {
        self.last_switch_time
    }

    /// Every switching moment recorded so far.
    pub fn switch_times(&self) -> &[f64] {
        &self.switch_times
    }

    pub fn threshold_value(&self, which: Threshold) -> f64 {
        match which {
            Threshold::Alpha => self.alpha,
            Threshold::Beta => self.beta,
        }
    }

    /// Applies a threshold attainment at time `t`. Returns whether the output
    /// changed (a switching moment).
    pub fn cross(&mut self, hit: Threshold, t: f64) -> Result<bool> {
        if let Some(last) = self.last_event_time {
            if t < last {
                return Err(Error::NonMonotoneTime { t, last });
            }
        }
        self.last_event_time = Some(t);
        let forced = match hit {
            Threshold::Alpha => RelayOutput::Plus,
            Threshold::Beta => RelayOutput::Minus,
        };
        if forced == self.output {
            return Ok(false);
        }
        self.output = forced;
        self.last_switch_time = Some(t);
        self.switch_times.push(t);
        Ok(true)
    }
}

/// Functional form of [`RelayState::init`].
pub fn relay_init(g0: f64, alpha: f64, beta: f64) -> Result<RelayState> {
    RelayState::init(g0, alpha, beta)
}

/// Functional form of [`RelayState::cross`]; returns the updated state.
pub fn relay_cross(state: &RelayState, hit: Threshold, t: f64) -> Result<RelayState> {
    let mut next = state.clone();
    next.cross(hit, t)?;
    Ok(next)
}
