use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PatternError {
    #[error("pattern needs at least one color")]
    NoColors,
    #[error("point {index} has mark {mark}, expected < {k}")]
    MarkOutOfRange { index: usize, mark: usize, k: usize },
    #[error("point {0} has non-finite coordinates")]
    NonFinite(usize),
    #[error("index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("point {0} belongs to more than one hyperedge")]
    OverlappingEdges(usize),
    #[error("points {a} and {b} share a mark inside one cluster")]
    DuplicateMark { a: usize, b: usize },
    #[error("invalid hyperedge: {0}")]
    InvalidEdge(&'static str),
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("window has zero or non-finite area")]
    DegenerateWindow,
    #[error("buffer must be a non-negative finite width, got {0}")]
    NegativeBuffer(f64),
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("{name} must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("sigma {sigma} outside (0, {sigma_max})")]
    SigmaOutOfRange { sigma: f64, sigma_max: f64 },
    #[error("cluster-size distribution must have {k} entries summing to 1")]
    BadSizeDistribution { k: usize },
    #[error("cluster size {size} not in 1..={k}")]
    BadClusterSize { size: usize, k: usize },
    #[error("density has zero total mass")]
    ZeroMass,
    #[error(transparent)]
    Pattern(#[from] PatternError),
}

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("two-color sampler needs k = 2, got k = {0}")]
    NotTwoColor(usize),
    #[error("need k >= 2 colors, got {0}")]
    TooFewColors(usize),
    #[error("invalid tempering ladder: {0}")]
    BadLadder(&'static str),
    #[error("invalid proposal grid: {0}")]
    BadGrid(String),
    #[error("invalid proposal: {0}")]
    BadProposal(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
}

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} samples, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("series lengths or dimensions differ")]
    Mismatch,
    #[error("bandwidth must be positive, got {0}")]
    BadBandwidth(f64),
    #[error("empty input")]
    Empty,
    #[error("intensity vanishes at data point {0}")]
    ZeroIntensity(usize),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum GridRefError {
    #[error("empty grid reference")]
    Empty,
    #[error("unknown grid letters {0:?}")]
    BadLetters(String),
    #[error("letter I is not used in grid references")]
    LetterI,
    #[error("expected an even number of digits (2-10), got {0}")]
    DigitCount(usize),
    #[error("unexpected character {0:?}")]
    BadChar(char),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {source}")]
    GridRef { line: usize, source: GridRefError },
    #[error("line {line}: unknown place name {name:?}")]
    UnknownPlace { line: usize, name: String },
    #[error("line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error("unrecognized header {0:?}")]
    BadHeader(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Pattern(#[from] PatternError),
}
