pub mod channel;
pub mod clock;
pub mod controller;
pub mod crlb;
pub mod harness;
pub mod iq;
pub mod solver;
pub mod time;
pub mod toa;
pub mod waveform;
