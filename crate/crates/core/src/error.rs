use thiserror::Error;

/// Errors produced by the fusion engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("joint index {0} out of range (skeletons have {max} joints)", max = crate::model::JOINT_COUNT)]
    JointOutOfRange(usize),

    #[error("invalid camera model `{camera}`: {reason}")]
    InvalidCamera { camera: String, reason: String },

    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),

    #[error("invalid depth {0}: must be positive and finite")]
    InvalidDepth(f64),

    #[error("pixel ({x}, {y}) outside {width}x{height} image")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("depth map has {got} samples, expected {expected}")]
    DepthMapSize { expected: usize, got: usize },

    #[error("neighborhood radius must be positive, got {0}")]
    InvalidRadius(f64),

    #[error("skeleton frame {found} does not match expected {expected}")]
    FrameMismatch { expected: String, found: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("time regression: {requested} is before {current}")]
    TimeRegression { current: f64, requested: f64 },

    #[error("camera `{camera}` timestamp {stamp} precedes previous {previous}")]
    CameraTimeRegression {
        camera: String,
        previous: f64,
        stamp: f64,
    },

    #[error("stale detection from `{camera}`: stamp {stamp} is {lag:.3}s behind newest {newest} (tolerance {tolerance}s)")]
    StaleDetection {
        camera: String,
        stamp: f64,
        newest: f64,
        lag: f64,
        tolerance: f64,
    },

    #[error("covariance is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown person {0}")]
    UnknownPerson(usize),

    #[error("time {t} outside scenario range [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },

    #[error("unknown camera id `{0}`")]
    UnknownCamera(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
