//! Latent-space diffusion: the variance schedule, the closed-form forward
//! marginal, SNR-matched time-step selection, and a learned noise predictor
//! driving the reverse process.

mod denoiser;
mod schedule;

pub use denoiser::{
    blind_snr, denoise, denoise_batch, denoise_with, receive_and_denoise,
    receive_and_denoise_batch, train_denoiser, DenoiserArch, DenoiserModel, Sampler,
};
pub use schedule::{estimate_timestep, forward_diffuse, forward_snr, make_schedule, VarianceSchedule};
