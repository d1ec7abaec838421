//! Leaky integrate-and-fire neuron with spike-frequency adaptation.
//!
//! Membrane and adaptation decays are applied exactly (exponential Euler);
//! synaptic input arrives as instantaneous voltage jumps at step boundaries,
//! after the decay. A single adaptation variable `c` is incremented by
//! `alpha_c` at every spike and drives a hyperpolarizing current `g_c * c`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamsError {
    #[error("{0} must be strictly positive")]
    NonPositive(&'static str),
    #[error("threshold ({theta}) must exceed resting potential ({v_rest})")]
    Threshold { theta: f64, v_rest: f64 },
    #[error("synaptic efficacies must satisfy j_inh <= 0 <= j_exc")]
    EfficacySign,
    #[error("{0} must be non-negative")]
    Negative(&'static str),
}

/// Neuron and input parameters. Times in ms, potentials in mV.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronParams {
    pub tau_m: f64,
    pub v_rest: f64,
    pub theta: f64,
    pub v_reset: f64,
    /// Absolute refractory period.
    pub tau_arp: f64,
    /// Adaptation decay time.
    pub tau_c: f64,
    /// Adaptation increment per spike.
    pub alpha_c: f64,
    /// Adaptation current per unit of `c`, mV/ms.
    pub g_c: f64,
    pub j_exc: f64,
    pub j_inh: f64,
    pub j_ext: f64,
    /// Rate of each external synapse, Hz.
    pub nu_ext: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        NeuronParams {
            tau_m: 20.0,
            v_rest: 0.0,
            theta: 20.0,
            v_reset: 10.0,
            tau_arp: 2.0,
            tau_c: 300.0,
            alpha_c: 1.0,
            g_c: 0.01,
            j_exc: 0.2,
            j_inh: -1.5,
            j_ext: 0.5,
            nu_ext: 3.0,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        for (name, v) in [
            ("tau_m", self.tau_m),
            ("tau_c", self.tau_c),
            ("tau_arp", self.tau_arp),
        ] {
            if !(v > 0.0) {
                return Err(ParamsError::NonPositive(name));
            }
        }
        if !(self.theta > self.v_rest) {
            return Err(ParamsError::Threshold {
                theta: self.theta,
                v_rest: self.v_rest,
            });
        }
        if !(self.j_inh <= 0.0 && self.j_exc >= 0.0) {
            return Err(ParamsError::EfficacySign);
        }
        for (name, v) in [
            ("alpha_c", self.alpha_c),
            ("g_c", self.g_c),
            ("nu_ext", self.nu_ext),
        ] {
            if !(v >= 0.0) {
                return Err(ParamsError::Negative(name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NeuronState {
    pub v: f64,
    pub c: f64,
    pub refractory_steps_left: u32,
}

impl NeuronState {
    pub fn at_rest(params: &NeuronParams) -> Self {
        NeuronState {
            v: params.v_rest,
            c: 0.0,
            refractory_steps_left: 0,
        }
    }
}

/// Per-step constants for a fixed `(params, dt)` pair.
#[derive(Debug, Clone)]
pub struct Integrator {
    v_rest: f64,
    theta: f64,
    v_reset: f64,
    alpha_c: f64,
    decay_m: f64,
    decay_c: f64,
    /// `g_c * tau_m * (1 - exp(-dt / tau_m))`
    adaptation_gain: f64,
    refractory_steps: u32,
}

impl Integrator {
    pub fn new(params: &NeuronParams, dt: f64) -> Self {
        debug_assert!(dt > 0.0);
        let decay_m = (-dt / params.tau_m).exp();
        Integrator {
            v_rest: params.v_rest,
            theta: params.theta,
            v_reset: params.v_reset,
            alpha_c: params.alpha_c,
            decay_m,
            decay_c: (-dt / params.tau_c).exp(),
            adaptation_gain: params.g_c * params.tau_m * (1.0 - decay_m),
            refractory_steps: (params.tau_arp / dt).round() as u32,
        }
    }

    pub fn refractory_steps(&self) -> u32 {
        self.refractory_steps
    }

    /// Advances `state` by one step in place and reports whether it spiked.
    #[inline]
    pub fn advance(&self, state: &mut NeuronState, summed_impulse: f64) -> bool {
        if state.refractory_steps_left > 0 {
            state.refractory_steps_left -= 1;
            state.v = self.v_reset;
            return false;
        }
        state.v = self.v_rest + (state.v - self.v_rest) * self.decay_m
            - self.adaptation_gain * state.c
            + summed_impulse;
        state.c *= self.decay_c;
        if state.v >= self.theta {
            state.v = self.v_reset;
            state.c += self.alpha_c;
            state.refractory_steps_left = self.refractory_steps;
            true
        } else {
            false
        }
    }
}

/// Advances one neuron by `dt` ms given the impulse landing in this step.
pub fn advance_neuron(
    state: NeuronState,
    summed_impulse: f64,
    params: &NeuronParams,
    dt: f64,
) -> (NeuronState, bool) {
    let mut next = state;
    let spiked = Integrator::new(params, dt).advance(&mut next, summed_impulse);
    (next, spiked)
}

/// Left-to-right sum of deliveries sorted ascending by source id.
///
/// Sorting the same multiset always yields the same order, so the result is
/// bit-identical regardless of arrival order.
pub fn summed_impulse(deliveries: &[(u32, f64)]) -> f64 {
    debug_assert!(
        deliveries.windows(2).all(|w| w[0].0 <= w[1].0),
        "deliveries must be sorted by source id"
    );
    deliveries.iter().fold(0.0, |acc, &(_, w)| acc + w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_decay_one_tau() {
        let p = NeuronParams::default();
        let s = NeuronState {
            v: 10.0,
            ..NeuronState::default()
        };
        let (next, spiked) = advance_neuron(s, 0.0, &p, 20.0);
        assert!(!spiked);
        assert!((next.v - 10.0 * (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn threshold_crossing() {
        let p = NeuronParams::default();
        let s = NeuronState {
            v: 19.9,
            ..NeuronState::default()
        };
        let (next, spiked) = advance_neuron(s, 0.2, &p, 0.1);
        assert!(spiked);
        assert_eq!(next.v, 10.0);
        assert_eq!(next.c, 1.0);
        assert_eq!(next.refractory_steps_left, 20);
    }

    #[test]
    fn refractory_clamps() {
        let p = NeuronParams::default();
        let s = NeuronState {
            v: 10.0,
            c: 0.5,
            refractory_steps_left: 3,
        };
        let (next, spiked) = advance_neuron(s, 100.0, &p, 0.1);
        assert!(!spiked);
        assert_eq!(
            next,
            NeuronState {
                v: 10.0,
                c: 0.5,
                refractory_steps_left: 2
            }
        );
    }

    #[test]
    fn refractory_steps_rounded() {
        let it = Integrator::new(&NeuronParams::default(), 0.1);
        assert_eq!(it.refractory_steps(), 20);
        let it = Integrator::new(&NeuronParams::default(), 0.3);
        assert_eq!(it.refractory_steps(), 7);
    }

    #[test]
    fn adaptation_decays_between_spikes() {
        let p = NeuronParams::default();
        let it = Integrator::new(&p, 0.1);
        let mut s = NeuronState {
            v: 0.0,
            c: 2.0,
            refractory_steps_left: 0,
        };
        let mut last = s.c;
        for _ in 0..1000 {
            assert!(!it.advance(&mut s, 0.0));
            assert!(s.c < last);
            last = s.c;
        }
    }

    #[test]
    fn summed_impulse_examples() {
        assert_eq!(summed_impulse(&[]), 0.0);
        assert_eq!(summed_impulse(&[(5, 0.2), (9, -1.0)]), 0.2 + -1.0);
        let mut a = vec![(9u32, -1.0), (5, 0.2), (7, 0.3)];
        let mut b = vec![(7u32, 0.3), (9, -1.0), (5, 0.2)];
        a.sort_by_key(|d| d.0);
        b.sort_by_key(|d| d.0);
        assert_eq!(summed_impulse(&a).to_bits(), summed_impulse(&b).to_bits());
    }

    #[test]
    #[should_panic(expected = "sorted")]
    #[cfg(debug_assertions)]
    fn summed_impulse_rejects_unsorted() {
        summed_impulse(&[(9, 1.0), (5, 1.0)]);
    }

    #[test]
    fn params_validation() {
        assert!(NeuronParams::default().validate().is_ok());
        let bad = NeuronParams {
            tau_m: 0.0,
            ..NeuronParams::default()
        };
        assert_eq!(bad.validate(), Err(ParamsError::NonPositive("tau_m")));
        let bad = NeuronParams {
            j_inh: 0.5,
            ..NeuronParams::default()
        };
        assert_eq!(bad.validate(), Err(ParamsError::EfficacySign));
        let bad = NeuronParams {
            theta: -1.0,
            ..NeuronParams::default()
        };
        assert!(matches!(bad.validate(), Err(ParamsError::Threshold { .. })));
    }
}
