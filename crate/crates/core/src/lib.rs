//! Memristive STDP synapse model and the spiking networks built on it.
//!
//! * [`device_model`]: state-dependent conductance updates, noise, multi-device synapses
//! * [`waveform`]: programming waveforms and per-spike energy
//! * [`neuron`]: LIF neurons, synaptic kernels, Poisson encoding
//! * [`supervised`]: spike-timing supervised training and the letter sequence predictor
//! * [`unsupervised`]: winner-take-all MNIST learning with homeostasis
//! * [`fitting`]: extraction of model parameters from STDP measurements
//! * [`harness`]: experiment configuration, datasets, snapshots and runners

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod device_model;
pub mod error;
pub mod fitting;
pub mod harness;
pub mod neuron;
pub mod rng;
pub mod supervised;
pub mod unsupervised;
pub mod waveform;

pub use device_model::{
    apply_update, delta_g_norm, effective_conductance, solve_boundaries, synapse_update, DeviceState, ModelParams,
    MultiDeviceSynapse, NoiseConfig, G0,
};
pub use error::{Error, Result};
pub use neuron::{lif_run, poisson_train, syn_current, LifParams, LifState, SpikeTrain};
pub use waveform::{difference_waveform, energy, v_post, v_pre, SampledWaveform, WaveformParams};
