use e2ebt_tensor::{ParamStore, Scalar};

/// Frozen copy of the generators used to score latent sentences for the
/// inference models, refreshed every `interval` iterations.
#[derive(Clone, Debug)]
pub struct FEGState<T: Scalar> {
    pub interval: u64,
    pub snapshot: Option<ParamStore<T>>,
    pub iterations_since_copy: u64,
}

impl<T: Scalar> FEGState<T> {
    pub fn new(interval: u64) -> Self {
        FEGState {
            interval,
            snapshot: None,
            iterations_since_copy: 0,
        }
    }

    pub fn enabled(&self) -> bool {
        self.interval > 0
    }

    /// Copy `learning` when `iteration` is a multiple of the interval.
    /// Returns whether a copy happened.
    pub fn step(&mut self, learning: &ParamStore<T>, iteration: u64) -> bool {
        if !self.enabled() {
            return false;
        }
        self.iterations_since_copy = iteration % self.interval;
        let due = self.iterations_since_copy == 0 || self.snapshot.is_none();
        if due {
            match &mut self.snapshot {
                Some(s) if s.len() == learning.len() => s.copy_values_from(learning),
                _ => self.snapshot = Some(learning.snapshot()),
            }
        }
        due
    }

    pub fn evaluating(&self) -> Option<&ParamStore<T>> {
        self.snapshot.as_ref().filter(|_| self.enabled())
    }
}
