use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A configuration value is invalid or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
    /// An input array has the wrong shape or invalid contents.
    #[error("input error: {0}")]
    Input(String),
    /// A loss or gradient became non-finite.
    #[error("numeric error: {0}")]
    NonFinite(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}

macro_rules! input_err {
    ($($arg:tt)*) => { $crate::error::Error::Input(alloc::format!($($arg)*)) };
}

pub(crate) use config_err;
pub(crate) use input_err;
